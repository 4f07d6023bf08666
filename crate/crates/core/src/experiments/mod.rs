//! End-to-end pipelines: pretraining, text-only adaptation, text-encoder
//! swaps, retrieval probes and t-SNE, with a plain-text report.

mod config;

pub use config::*;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::analysis::{
    asif_retrieval_probe, cosine_retrieval_probe, embed_pairs, paired_distance_ratio, tsne, PairedSet, PointMeta, ProbeResult,
    TsneResult,
};
use crate::encoders::{Component, FusionMode, ModelParams, Tap};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::synthcorpus::{make_corpus, make_domain, Corpus, DomainKnobs, DomainSpec, Split};
use crate::training::{adapt_text_only, evaluate_ter, measure_text_encoder_loss, pretrain_paired, swap_components, TrainConfig};

/// Generated domains and corpora of one seed.
#[derive(Debug, Clone)]
pub struct Domains {
    pub source: DomainSpec,
    pub target: DomainSpec,
    pub source_train: Corpus,
    pub target_train: Corpus,
    pub source_test: Corpus,
    pub target_test: Corpus,
}

impl Domains {
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        let source = make_domain(&cfg.source, cfg.source_seed())?;
        let target = make_domain(&cfg.target, cfg.target_seed())?;
        Ok(Self {
            source_train: make_corpus(&source, cfg.corpus.train, Split::Train, cfg.source_seed())?,
            target_train: make_corpus(&target, cfg.corpus.train, Split::Train, cfg.target_seed())?,
            source_test: make_corpus(&source, cfg.corpus.test, Split::Test, cfg.source_seed())?,
            target_test: make_corpus(&target, cfg.corpus.test, Split::Test, cfg.target_seed())?,
            source,
            target,
        })
    }

    /// In-domain paired test set used by the retrieval probes.
    pub fn probe_set(&self, cfg: &ExperimentConfig) -> Result<Corpus> {
        make_corpus(&self.source, cfg.corpus.probe, Split::Test, cfg.source_seed())
    }
}

/// Source and target error rates of one model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainTer {
    pub source: f64,
    pub target: f64,
}

/// Everything computed for one seed, cached so later experiments reuse it.
pub struct SeedRun {
    pub cfg: ExperimentConfig,
    pub data: Domains,
    maestro: Option<ModelParams>,
    slam: Option<ModelParams>,
    adapted: Option<(ModelParams, DomainTer, DomainTer)>,
    /// Text encoders fit on target-like domains, keyed by median duration bits.
    encoders: BTreeMap<u64, ModelParams>,
    /// (text encoder loss, adapted target TER) per (donor median bits, swapped tags).
    swaps: BTreeMap<(u64, Vec<Component>), (f64, f64)>,
}

/// Text-only adaptation outcome: error rates before and after.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptationResult {
    pub before: DomainTer,
    pub after: DomainTer,
}

impl AdaptationResult {
    /// Relative target error reduction (positive is better).
    pub fn target_gain(&self) -> f64 {
        (self.before.target - self.after.target) / self.before.target
    }

    /// Relative source error increase (positive is worse).
    pub fn source_degradation(&self) -> f64 {
        (self.after.source - self.before.source) / self.before.source
    }
}

/// One text-encoder configuration evaluated by adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderRow {
    pub label: String,
    /// Median token duration of the domain the duration predictor was fit on.
    pub duration_median: f64,
    pub text_encoder_loss: f64,
    pub target_ter: f64,
}

/// Direct and anchored retrieval results of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub fusion: FusionMode,
    pub direct_modal: ProbeResult,
    pub direct_shared: ProbeResult,
    pub asif_modal: Option<ProbeResult>,
}

/// t-SNE of paired points at one tap. Rows `0..n` are speech, `n..2n` text.
#[derive(Debug, Clone, PartialEq)]
pub struct TsneRun {
    pub tap: Tap,
    pub result: TsneResult,
    pub meta: Vec<PointMeta>,
    pub paired_distance_ratio: f64,
}

/// Tags fit by a domain-specific text encoder; the token embedder stays shared.
pub const ENCODER_SWAP_TAGS: [Component; 2] = [Component::DurationPredictor, Component::Refiner];

impl SeedRun {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let data = Domains::generate(&cfg)?;
        Ok(Self {
            cfg,
            data,
            maestro: None,
            slam: None,
            adapted: None,
            encoders: BTreeMap::new(),
            swaps: BTreeMap::new(),
        })
    }

    pub fn seed(&self) -> u64 {
        self.cfg.seed
    }

    fn pretrain(&self, fusion: FusionMode) -> Result<ModelParams> {
        let init = ModelParams::init(&self.cfg.model_for(fusion))?;
        Ok(pretrain_paired(init, &self.data.source_train, &self.cfg.train)?.0)
    }

    /// Maestro model pretrained on source paired data.
    pub fn maestro(&mut self) -> Result<&ModelParams> {
        if self.maestro.is_none() {
            self.maestro = Some(self.pretrain(FusionMode::Maestro)?);
        }
        Ok(self.maestro.as_ref().expect("just set"))
    }

    /// SLAM-style concatenation model pretrained on source paired data.
    pub fn slam(&mut self) -> Result<&ModelParams> {
        if self.slam.is_none() {
            self.slam = Some(self.pretrain(FusionMode::SlamConcat)?);
        }
        Ok(self.slam.as_ref().expect("just set"))
    }

    fn ter(&self, params: &ModelParams) -> Result<DomainTer> {
        Ok(DomainTer {
            source: evaluate_ter(params, &self.data.source_test)?.ter(),
            target: evaluate_ter(params, &self.data.target_test)?.ter(),
        })
    }

    fn adapt(&self, params: &ModelParams) -> Result<ModelParams> {
        let texts = self.data.target_train.texts();
        Ok(adapt_text_only(params.clone(), &texts, &self.data.source_train, &self.cfg.adapt)?.0)
    }

    /// Text-only adaptation of the source Maestro model with target text.
    pub fn adaptation(&mut self) -> Result<AdaptationResult> {
        if self.adapted.is_none() {
            let base = self.maestro()?.clone();
            let before = self.ter(&base)?;
            let adapted = self.adapt(&base)?;
            let after = self.ter(&adapted)?;
            self.adapted = Some((adapted, before, after));
        }
        let (_, before, after) = self.adapted.as_ref().expect("just set");
        Ok(AdaptationResult {
            before: *before,
            after: *after,
        })
    }

    /// Fits the duration predictor and refiner of the source model on `paired`,
    /// every other component frozen.
    pub fn fit_text_encoder(&mut self, paired: &Corpus) -> Result<ModelParams> {
        let base = self.maestro()?.clone();
        let trainable: BTreeSet<Component> = ENCODER_SWAP_TAGS.into_iter().collect();
        let cfg = TrainConfig {
            steps: self.cfg.encoder_steps,
            frozen: Component::ALL.into_iter().filter(|t| !trainable.contains(t)).collect(),
            ..self.cfg.train.clone()
        };
        Ok(pretrain_paired(base, paired, &cfg)?.0)
    }

    /// Text encoder fit on the target domain with its median token duration
    /// replaced by `median`. The domain seed is the target's, so variants
    /// share token sequences and differ only in duration scale.
    fn encoder_for(&mut self, median: f64) -> Result<ModelParams> {
        if let Some(p) = self.encoders.get(&median.to_bits()) {
            return Ok(p.clone());
        }
        let target = &self.cfg.target;
        let knobs = DomainKnobs {
            id: if median == target.median_duration {
                target.id.clone()
            } else {
                format!("{}-d{median}", target.id)
            },
            median_duration: median,
            ..target.clone()
        };
        let seed = self.cfg.target_seed();
        let paired = make_corpus(&make_domain(&knobs, seed)?, self.cfg.corpus.train, Split::Train, seed)?;
        let fitted = self.fit_text_encoder(&paired)?;
        self.encoders.insert(median.to_bits(), fitted.clone());
        Ok(fitted)
    }

    /// Source model with `tags` taken from the encoder fit at `donor_median`,
    /// scored by text encoder loss and post-adaptation target TER.
    fn swap_row(&mut self, label: String, duration_median: f64, donor_median: f64, tags: &[Component]) -> Result<EncoderRow> {
        let key = (donor_median.to_bits(), tags.to_vec());
        let (text_encoder_loss, target_ter) = match self.swaps.get(&key) {
            Some(&cached) => cached,
            None if tags.is_empty() => {
                // Identical to the plain adaptation run; reuse it.
                let after = self.adaptation()?.after;
                self.maestro()?;
                let base = self.maestro.as_ref().expect("pretrained");
                (measure_text_encoder_loss(base, &self.data.target_test)?, after.target)
            }
            None => {
                let donor = self.encoder_for(donor_median)?;
                self.maestro()?;
                let model = swap_components(self.maestro.as_ref().expect("pretrained"), &donor, tags)?;
                let loss = measure_text_encoder_loss(&model, &self.data.target_test)?;
                let adapted = self.adapt(&model)?;
                (loss, evaluate_ter(&adapted, &self.data.target_test)?.ter())
            }
        };
        self.swaps.insert(key, (text_encoder_loss, target_ter));
        Ok(EncoderRow {
            label,
            duration_median,
            text_encoder_loss,
            target_ter,
        })
    }

    /// Duration-mismatch sweep: text encoders fit on target-like domains whose
    /// median token duration is each of `cfg.duration_variants`, then used for
    /// target text adaptation.
    pub fn duration_variants(&mut self) -> Result<Vec<EncoderRow>> {
        let id = self.cfg.target.id.clone();
        self.cfg
            .duration_variants
            .clone()
            .into_iter()
            .map(|m| self.swap_row(format!("{id}-d{m}"), m, m, &ENCODER_SWAP_TAGS))
            .collect()
    }

    /// The four duration/refiner combinations of source and target text encoders.
    pub fn swap_table(&mut self) -> Result<Vec<EncoderRow>> {
        let (src, tgt) = (self.cfg.source.median_duration, self.cfg.target.median_duration);
        let combos: [(&str, f64, &[Component]); 4] = [
            ("source duration, source refiner", src, &[]),
            ("target duration, target refiner", tgt, &ENCODER_SWAP_TAGS),
            ("target duration, source refiner", tgt, &[Component::DurationPredictor]),
            ("source duration, target refiner", src, &[Component::Refiner]),
        ];
        combos
            .into_iter()
            .map(|(label, median, tags)| self.swap_row(label.into(), median, tgt, tags))
            .collect()
    }

    fn pairs(&mut self, fusion: FusionMode, tap: Tap, n: Option<usize>) -> Result<PairedSet> {
        let mut probe = self.data.probe_set(&self.cfg)?;
        if let Some(n) = n {
            probe.utterances.truncate(n);
        }
        let params = match fusion {
            FusionMode::Maestro => self.maestro()?,
            FusionMode::SlamConcat => self.slam()?,
        };
        embed_pairs(params, &probe, tap)
    }

    /// Direct probes at both taps; the anchored probe at the modal tap for SLAM.
    pub fn retrieval(&mut self, fusion: FusionMode) -> Result<RetrievalResult> {
        let modal = self.pairs(fusion, Tap::Modal, None)?;
        let shared = self.pairs(fusion, Tap::Shared, None)?;
        let asif_modal = match fusion {
            FusionMode::SlamConcat => Some(asif_retrieval_probe(&modal, &self.cfg.probe)?),
            FusionMode::Maestro => None,
        };
        Ok(RetrievalResult {
            fusion,
            direct_modal: cosine_retrieval_probe(&modal)?,
            direct_shared: cosine_retrieval_probe(&shared)?,
            asif_modal,
        })
    }

    /// Anchored probe on an arbitrary model's modal or shared tap.
    pub fn asif(&mut self, fusion: FusionMode, tap: Tap) -> Result<ProbeResult> {
        let pairs = self.pairs(fusion, tap, None)?;
        asif_retrieval_probe(&pairs, &self.cfg.probe)
    }

    /// t-SNE of the first `tsne_pairs` probe pairs of the Maestro model.
    pub fn tsne_at(&mut self, tap: Tap) -> Result<TsneRun> {
        let n = self.cfg.tsne_pairs;
        let pairs = self.pairs(FusionMode::Maestro, tap, Some(n))?;
        let n = pairs.len();
        let rows: Vec<Vec<f64>> = pairs
            .speech
            .items
            .iter()
            .chain(&pairs.text.items)
            .map(|e| e.vector.clone())
            .collect();
        let meta = pairs
            .speech
            .items
            .iter()
            .chain(&pairs.text.items)
            .map(|e| PointMeta {
                modality: e.modality,
                domain: e.domain.clone(),
                mean_duration: e.mean_duration,
            })
            .collect();
        let result = tsne(&Tensor::from_rows(&rows)?, &self.cfg.tsne)?;
        let ratio = paired_distance_ratio(&result.coords, n)?;
        Ok(TsneRun {
            tap,
            result,
            meta,
            paired_distance_ratio: ratio,
        })
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Input("spearman needs two equal-length samples of size ≥ 2".into()));
    }
    let ranks = |x: &[f64]| {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        let mut r = vec![0.0; x.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    };
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}

/// Column-wise mean of per-seed rows with identical labels.
pub fn mean_rows(per_seed: &[Vec<EncoderRow>]) -> Result<Vec<EncoderRow>> {
    let first = per_seed.first().ok_or_else(|| Error::Input("no seeds".into()))?;
    let n = per_seed.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut out = row.clone();
            out.text_encoder_loss = 0.0;
            out.target_ter = 0.0;
            for rows in per_seed {
                let r = rows
                    .get(i)
                    .filter(|r| r.label == row.label)
                    .ok_or_else(|| Error::Input("seed runs disagree on rows".into()))?;
                out.text_encoder_loss += r.text_encoder_loss / n;
                out.target_ter += r.target_ter / n;
            }
            Ok(out)
        })
        .collect()
}

fn encoder_table(out: &mut String, title: &str, rows: &[EncoderRow]) {
    let _ = writeln!(out, "## {title}");
    let _ = writeln!(out, "configuration\tduration_median\ttext_encoder_loss\ttarget_ter");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}",
            r.label, r.duration_median, r.text_encoder_loss, r.target_ter
        );
    }
    out.push('\n');
}

/// Runs every pipeline for each seed and renders the comparison tables.
/// Retrieval and t-SNE use the first seed.
pub fn run_report(runs: &mut [SeedRun]) -> Result<String> {
    let first = runs.first().ok_or_else(|| Error::Input("report needs at least one seed".into()))?;
    let mut out = first.cfg.echo_comment();
    let seeds: Vec<String> = runs.iter().map(|r| r.seed().to_string()).collect();
    let _ = writeln!(out, "# seeds = {}\n", seeds.join(", "));

    let _ = writeln!(out, "## text-only adaptation");
    let _ = writeln!(out, "seed\tsource_before\tsource_after\ttarget_before\ttarget_after\ttarget_gain\tsource_degradation");
    for run in runs.iter_mut() {
        let a = run.adaptation()?;
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            run.seed(),
            a.before.source,
            a.after.source,
            a.before.target,
            a.after.target,
            a.target_gain(),
            a.source_degradation()
        );
    }
    out.push('\n');

    let variants = runs.iter_mut().map(SeedRun::duration_variants).collect::<Result<Vec<_>>>()?;
    let mean = mean_rows(&variants)?;
    encoder_table(&mut out, "duration-mismatch variants (mean over seeds)", &mean);
    let losses: Vec<f64> = mean.iter().map(|r| r.text_encoder_loss).collect();
    let ters: Vec<f64> = mean.iter().map(|r| r.target_ter).collect();
    let _ = writeln!(out, "spearman(text_encoder_loss, target_ter) = {:.6}\n", spearman(&losses, &ters)?);

    let swaps = runs.iter_mut().map(SeedRun::swap_table).collect::<Result<Vec<_>>>()?;
    encoder_table(&mut out, "duration/refiner swaps (mean over seeds)", &mean_rows(&swaps)?);

    let run = &mut runs[0];
    let _ = writeln!(out, "## retrieval (seed {})", run.seed());
    let _ = writeln!(out, "model\tprobe\ttap\taccuracy\tties");
    for fusion in [FusionMode::Maestro, FusionMode::SlamConcat] {
        let r = run.retrieval(fusion)?;
        let mut line = |probe: &str, tap: Tap, p: &ProbeResult| {
            let _ = writeln!(out, "{}\t{probe}\t{}\t{:.6}\t{}", fusion.name(), tap.name(), p.accuracy(), p.ties);
        };
        line("direct", Tap::Modal, &r.direct_modal);
        line("direct", Tap::Shared, &r.direct_shared);
        if let Some(a) = &r.asif_modal {
            line("asif", Tap::Modal, a);
        }
    }
    out.push('\n');

    let _ = writeln!(out, "## t-SNE (maestro, seed {})", run.seed());
    let _ = writeln!(out, "tap\tinitial_kl\tfinal_kl\tpaired_distance_ratio");
    for tap in [Tap::Modal, Tap::Shared] {
        let t = run.tsne_at(tap)?;
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}",
            tap.name(),
            t.result.initial_kl(),
            t.result.final_kl(),
            t.paired_distance_ratio
        );
    }
    Ok(out)
}
