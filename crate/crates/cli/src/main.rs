//! `mstl`: generate corpora, train and adapt models, swap text-encoder parts,
//! and run the retrieval and t-SNE analyses.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad configuration or flags,
//! 3 checkpoint/config/corpus mismatch.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "mstl", version, about = "Joint speech-text representation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a corpus for one domain and split.
    Gen(GenArgs),
    /// Pretrain on a paired corpus.
    Train(TrainArgs),
    /// Text-only adaptation of a Maestro checkpoint.
    Adapt(AdaptArgs),
    /// Copy component tags from a donor checkpoint into a base checkpoint.
    Swap(SwapArgs),
    /// Greedy-decode a corpus and report the token error rate.
    Eval(EvalArgs),
    /// Text encoder loss (gold durations) on a paired corpus.
    Consistency(CkptCorpus),
    /// Dump pooled embeddings as TSV.
    Embed(EmbedArgs),
    /// Direct cosine retrieval between paired speech and text.
    #[command(name = "probe-direct")]
    ProbeDirect(ProbeArgs),
    /// Anchored (relative representation) retrieval.
    #[command(name = "probe-asif")]
    ProbeAsif(AsifArgs),
    /// t-SNE of paired embeddings rendered as SVG.
    Tsne(TsneArgs),
    /// Run every experiment over several seeds and write the comparison tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Source,
    Target,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    /// The in-domain paired set used by the retrieval probes.
    Probe,
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Maestro,
    #[value(name = "slam_concat")]
    SlamConcat,
}

#[derive(Clone, Copy, ValueEnum)]
enum TapArg {
    Modal,
    Shared,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Speech,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum ColorArg {
    Modality,
    Domain,
    #[value(name = "mean_duration")]
    MeanDuration,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum)]
    domain: DomainArg,
    #[arg(long, value_enum, default_value = "train")]
    split: SplitArg,
    /// Utterance count; defaults to the config's size for the split.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Paired training corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// Defaults to the config's `[model] fusion`.
    #[arg(long, value_enum)]
    fusion: Option<FusionArg>,
    /// Continue from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Loss curve TSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct AdaptArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Maestro checkpoint to adapt.
    #[arg(long)]
    init: PathBuf,
    /// Corpus whose transcripts serve as target-domain text.
    #[arg(long)]
    text: PathBuf,
    /// Source paired corpus mixed into every step.
    #[arg(long)]
    paired: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct SwapArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    donor: PathBuf,
    /// Comma-separated component tags taken from the donor; may be empty.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    tags: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// One or more corpora; per-domain and pooled rates are reported.
    #[arg(long, required = true, num_args = 1..)]
    corpus: Vec<PathBuf>,
    /// Report file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CkptCorpus {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    tap: TapArg,
    #[arg(long, value_enum)]
    modality: ModalityArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    tap: TapArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AsifArgs {
    #[command(flatten)]
    probe: ProbeArgs,
    /// Supplies the `[probe]` section and seed.
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    power: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    eval_count: Option<usize>,
    #[arg(long)]
    anchor_fraction: Option<f64>,
}

#[derive(Args)]
struct TsneArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    tap: TapArg,
    /// Supplies the `[tsne]` section and seed.
    #[command(flatten)]
    config: ConfigArgs,
    /// Number of leading pairs embedded; defaults to `[tsne] pairs`.
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long, value_enum, default_value = "modality")]
    color_by: ColorArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds to run; retrieval and t-SNE use the first.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
