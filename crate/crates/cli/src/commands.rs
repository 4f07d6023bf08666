use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use mstl_core::analysis::{
    asif_retrieval_probe, cosine_retrieval_probe, embed_corpus, embed_pairs, paired_distance_ratio, scatter_svg, tsne, ColorBy,
    PointMeta,
};
use mstl_core::encoders::{Component, FusionMode, Modality, ModelParams, Tap};
use mstl_core::experiments::{run_report, ExperimentConfig, SeedRun};
use mstl_core::persist::{atomic_write, embeddings_to_tsv, load_checkpoint, load_corpus, save_checkpoint, save_corpus};
use mstl_core::synthcorpus::{make_corpus, make_domain, Corpus, Split};
use mstl_core::training::{adapt_text_only, evaluate_ter, measure_text_encoder_loss, pretrain_paired, swap_components, EvalReport, TrainLog};
use mstl_core::{Error, Tensor};

use crate::*;

/// 2 for configuration problems, 3 for incompatible artifacts, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        match cause.downcast_ref::<Error>() {
            Some(Error::Config(_)) => return 2,
            Some(Error::Incompatible(_)) => return 3,
            Some(_) => return 1,
            None => {}
        }
    }
    1
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Adapt(a) => adapt(a),
        Command::Swap(a) => swap(a),
        Command::Eval(a) => eval(a),
        Command::Consistency(a) => consistency(a),
        Command::Embed(a) => embed(a),
        Command::ProbeDirect(a) => probe_direct(a),
        Command::ProbeAsif(a) => probe_asif(a),
        Command::Tsne(a) => tsne_cmd(a),
        Command::Report(a) => report(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let cfg = ExperimentConfig::parse(&text).with_context(|| format!("in config {}", path.display()))?;
    Ok(cfg)
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let cfg = load_config(self.config.as_deref())?;
        Ok(match self.seed {
            Some(seed) => cfg.with_seed(seed),
            None => cfg,
        })
    }
}

impl TapArg {
    fn tap(self) -> Tap {
        match self {
            TapArg::Modal => Tap::Modal,
            TapArg::Shared => Tap::Shared,
        }
    }
}

fn checkpoint(path: &Path) -> Result<ModelParams> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn corpus(path: &Path) -> Result<Corpus> {
    load_corpus(path).with_context(|| format!("loading corpus {}", path.display()))
}

/// The corpus must fit the model's vocabulary and frame width.
fn check_corpus(params: &ModelParams, corpus: &Corpus, path: &Path) -> Result<()> {
    let m = params.config();
    if corpus.spec.vocab() != m.vocab || corpus.spec.feature_dim() != m.feature_dim {
        return Err(Error::Incompatible(format!(
            "corpus {} has vocab {} and feature_dim {}, model expects {} and {}",
            path.display(),
            corpus.spec.vocab(),
            corpus.spec.feature_dim(),
            m.vocab,
            m.feature_dim
        ))
        .into());
    }
    Ok(())
}

fn comment(text: &str) -> String {
    text.lines().map(|l| format!("# {l}\n")).collect()
}

/// Provenance block for artifacts derived from a checkpoint and a corpus.
fn provenance(params: &ModelParams, corpus: &Corpus) -> String {
    format!(
        "[model]\n{}[corpus]\ndomain = {}\nsplit = {}\nseed = {}\nutterances = {}\n",
        params.config().to_echo(),
        corpus.spec.id,
        corpus.split.name(),
        corpus.seed,
        corpus.len()
    )
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_log(path: Option<&Path>, cfg: &ExperimentConfig, log: &TrainLog) -> Result<()> {
    match path {
        Some(path) => write_text(path, &(cfg.echo_comment() + &log.to_tsv())),
        None => Ok(()),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let (knobs, seed) = match a.domain {
        DomainArg::Source => (&cfg.source, cfg.source_seed()),
        DomainArg::Target => (&cfg.target, cfg.target_seed()),
    };
    let (split, default_count) = match a.split {
        SplitArg::Train => (Split::Train, cfg.corpus.train),
        SplitArg::Test => (Split::Test, cfg.corpus.test),
        SplitArg::Probe => (Split::Test, cfg.corpus.probe),
    };
    let count = a.count.unwrap_or(default_count);
    let spec = make_domain(knobs, seed)?;
    let corpus = make_corpus(&spec, count, split, seed)?;
    save_corpus(&a.out, &corpus).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("{}: {} {} utterances of domain {}", a.out.display(), count, split.name(), spec.id);
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let fusion = match a.fusion {
        Some(FusionArg::Maestro) => FusionMode::Maestro,
        Some(FusionArg::SlamConcat) => FusionMode::SlamConcat,
        None => cfg.model.fusion,
    };
    let model = cfg.model_for(fusion);
    let init = match &a.init {
        Some(path) => {
            let p = checkpoint(path)?;
            if p.config() != &model {
                return Err(Error::Incompatible(format!(
                    "checkpoint {} was built with [{}], config asks for [{}]",
                    path.display(),
                    p.config().to_echo().trim_end().replace('\n', "; "),
                    model.to_echo().trim_end().replace('\n', "; ")
                ))
                .into());
            }
            p
        }
        None => ModelParams::init(&model)?,
    };
    let data = corpus(&a.corpus)?;
    check_corpus(&init, &data, &a.corpus)?;
    let (params, log) = pretrain_paired(init, &data, &cfg.train)?;
    save_checkpoint(&a.out, &params).with_context(|| format!("writing {}", a.out.display()))?;
    write_log(a.log.as_deref(), &cfg, &log)?;
    if let Some(last) = log.records.last() {
        eprintln!("{} steps, final loss {:.4}", log.records.len(), last.total);
    }
    Ok(())
}

fn adapt(a: AdaptArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let init = checkpoint(&a.init)?;
    if init.config().fusion != FusionMode::Maestro {
        return Err(Error::Incompatible(format!("{} is not a maestro checkpoint", a.init.display())).into());
    }
    if init.config() != &cfg.model_for(FusionMode::Maestro) {
        return Err(Error::Incompatible(format!(
            "checkpoint {} does not match the config's [model] section and seed",
            a.init.display()
        ))
        .into());
    }
    let text = corpus(&a.text)?;
    let paired = corpus(&a.paired)?;
    check_corpus(&init, &text, &a.text)?;
    check_corpus(&init, &paired, &a.paired)?;
    let (params, log) = adapt_text_only(init, &text.texts(), &paired, &cfg.adapt)?;
    save_checkpoint(&a.out, &params).with_context(|| format!("writing {}", a.out.display()))?;
    write_log(a.log.as_deref(), &cfg, &log)?;
    if let Some(last) = log.records.last() {
        eprintln!("{} steps, final loss {:.4}", log.records.len(), last.total);
    }
    Ok(())
}

fn swap(a: SwapArgs) -> Result<()> {
    let tags = a
        .tags
        .iter()
        .filter(|t| !t.trim().is_empty())
        .map(|t| Component::parse(t.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    let base = checkpoint(&a.base)?;
    let donor = checkpoint(&a.donor)?;
    let out = swap_components(&base, &donor, &tags)?;
    save_checkpoint(&a.out, &out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let params = checkpoint(&a.ckpt)?;
    let mut report = EvalReport::default();
    let mut header = comment(&format!("[model]\n{}", params.config().to_echo()));
    for path in &a.corpus {
        let c = corpus(path)?;
        check_corpus(&params, &c, path)?;
        header += &comment(&format!("corpus = {} {} seed {} ({} utterances)", c.spec.id, c.split.name(), c.seed, c.len()));
        report.merge(&evaluate_ter(&params, &c)?);
    }
    emit(a.out.as_deref(), &(header + &report.to_text()))
}

fn consistency(a: CkptCorpus) -> Result<()> {
    let params = checkpoint(&a.ckpt)?;
    let c = corpus(&a.corpus)?;
    check_corpus(&params, &c, &a.corpus)?;
    let loss = measure_text_encoder_loss(&params, &c)?;
    emit(a.out.as_deref(), &format!("{}text_encoder_loss = {loss:.9}\n", comment(&provenance(&params, &c))))
}

fn embed(a: EmbedArgs) -> Result<()> {
    let params = checkpoint(&a.ckpt)?;
    let c = corpus(&a.corpus)?;
    check_corpus(&params, &c, &a.corpus)?;
    let modality = match a.modality {
        ModalityArg::Speech => Modality::Speech,
        ModalityArg::Text => Modality::Text,
    };
    let set = embed_corpus(&params, &c, a.tap.tap(), modality)?;
    write_text(&a.out, &embeddings_to_tsv(&set, &provenance(&params, &c)))
}

fn probe_direct(a: ProbeArgs) -> Result<()> {
    let params = checkpoint(&a.ckpt)?;
    let c = corpus(&a.corpus)?;
    check_corpus(&params, &c, &a.corpus)?;
    let tap = a.tap.tap();
    let result = cosine_retrieval_probe(&embed_pairs(&params, &c, tap)?)?;
    let text = format!("{}tap = {}\n{}", comment(&provenance(&params, &c)), tap.name(), result.to_text());
    emit(a.out.as_deref(), &text)
}

fn probe_asif(a: AsifArgs) -> Result<()> {
    let mut probe = a.config.resolve()?.probe;
    probe.k = a.k.unwrap_or(probe.k);
    probe.power = a.power.unwrap_or(probe.power);
    probe.trials = a.trials.unwrap_or(probe.trials);
    probe.eval_count = a.eval_count.unwrap_or(probe.eval_count);
    probe.anchor_fraction = a.anchor_fraction.unwrap_or(probe.anchor_fraction);
    let p = a.probe;
    let params = checkpoint(&p.ckpt)?;
    let c = corpus(&p.corpus)?;
    check_corpus(&params, &c, &p.corpus)?;
    let tap = p.tap.tap();
    let result = asif_retrieval_probe(&embed_pairs(&params, &c, tap)?, &probe)?;
    let text = format!("{}tap = {}\n{}", comment(&provenance(&params, &c)), tap.name(), result.to_text());
    emit(p.out.as_deref(), &text)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tsne_cmd(a: TsneArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let params = checkpoint(&a.ckpt)?;
    let mut c = corpus(&a.corpus)?;
    check_corpus(&params, &c, &a.corpus)?;
    let n = a.pairs.unwrap_or(cfg.tsne_pairs).min(c.len());
    c.utterances.truncate(n);
    let tap = a.tap.tap();
    let pairs = embed_pairs(&params, &c, tap)?;
    let items: Vec<_> = pairs.speech.items.iter().chain(&pairs.text.items).collect();
    let rows: Vec<Vec<f64>> = items.iter().map(|e| e.vector.clone()).collect();
    let meta: Vec<PointMeta> = items
        .iter()
        .map(|e| PointMeta {
            modality: e.modality,
            domain: e.domain.clone(),
            mean_duration: e.mean_duration,
        })
        .collect();
    let result = tsne(&Tensor::from_rows(&rows)?, &cfg.tsne)?;
    let ratio = paired_distance_ratio(&result.coords, n)?;
    let color_by = match a.color_by {
        ColorArg::Modality => ColorBy::Modality,
        ColorArg::Domain => ColorBy::Domain,
        ColorArg::MeanDuration => ColorBy::MeanDuration,
    };
    let title = format!("{} tap, {} pairs", tap.name(), n);
    let svg = scatter_svg(&result.coords, &meta, color_by, &title)?;
    let desc = format!(
        "{}[tsne]\nperplexity = {}\niterations = {}\nlearning_rate = {}\nexaggeration = {}\nexaggeration_steps = {}\nseed = {}\npairs = {n}\ninitial_kl = {}\nfinal_kl = {}\npaired_distance_ratio = {ratio}\n",
        provenance(&params, &c),
        cfg.tsne.perplexity,
        cfg.tsne.iterations,
        cfg.tsne.learning_rate,
        cfg.tsne.exaggeration,
        cfg.tsne.exaggeration_steps,
        cfg.tsne.seed,
        result.initial_kl(),
        result.final_kl()
    );
    let svg = match svg.split_once('\n') {
        Some((open, rest)) => format!("{open}\n<desc>\n{}</desc>\n{rest}", xml_escape(&desc)),
        None => svg,
    };
    write_text(&a.out, &svg)?;
    eprintln!(
        "kl {:.4} -> {:.4}, paired distance ratio {ratio:.4}",
        result.initial_kl(),
        result.final_kl()
    );
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    if a.seeds.is_empty() {
        return Err(Error::Config("--seeds needs at least one seed".into()).into());
    }
    let mut runs = a
        .seeds
        .iter()
        .map(|&s| SeedRun::new(cfg.with_seed(s)))
        .collect::<Result<Vec<_>, _>>()?;
    emit(a.out.as_deref(), &run_report(&mut runs)?)
}
