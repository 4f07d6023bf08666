//! Optimization recipes, component swapping, decoding and error rates.

mod decode;

pub use decode::*;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;

use crate::encoders::{forward_paired, forward_text_only, Component, ForwardOptions, LossBundle, ModelParams, ParamGrads, Session};
use crate::error::{Error, Result};
use crate::numerics::{rng_stream, LabRng};
use crate::synthcorpus::{Corpus, Utterance};

/// Learning-rate schedule over the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Linear decay to zero at the final step.
    LinearDecay,
}

impl LrSchedule {
    pub fn name(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::LinearDecay => "linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "linear" => Ok(LrSchedule::LinearDecay),
            other => Err(Error::Config(format!("unknown schedule `{other}` (constant, linear)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    /// Paired utterances per step.
    pub paired_count: usize,
    /// Text-only utterances per step (adaptation only).
    pub text_count: usize,
    pub forward: ForwardOptions,
    /// Global gradient-norm clipping threshold.
    pub clip_norm: f64,
    pub frozen: BTreeSet<Component>,
    /// Permit adaptation steps without paired data.
    pub allow_text_only: bool,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults for paired pretraining.
    pub fn pretrain() -> Self {
        Self {
            steps: 800,
            learning_rate: 0.1,
            schedule: LrSchedule::LinearDecay,
            paired_count: 16,
            text_count: 0,
            forward: ForwardOptions::default(),
            clip_norm: 2.0,
            frozen: BTreeSet::new(),
            allow_text_only: false,
            seed: 0,
        }
    }

    /// Defaults for text-only adaptation: text encoder frozen, 16 text + 16 paired.
    pub fn adapt() -> Self {
        Self {
            steps: 300,
            learning_rate: 0.02,
            schedule: LrSchedule::Constant,
            text_count: 16,
            frozen: Component::TEXT_ENCODER.into_iter().collect(),
            ..Self::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate at 0-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::LinearDecay => self.learning_rate * (1.0 - step as f64 / self.steps as f64),
        }
    }
}

/// One row of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub total: f64,
    pub task_speech: f64,
    pub task_text: f64,
    pub consistency: f64,
    pub duration: f64,
    pub contrastive: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LossRecord>,
}

impl TrainLog {
    pub const HEADER: &'static str = "step\ttotal\ttask_speech\ttask_text\tconsistency\tduration\tcontrastive\tlr";

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                r.step, r.total, r.task_speech, r.task_text, r.consistency, r.duration, r.contrastive, r.learning_rate
            );
        }
        out
    }

    /// Mean of `f` over the first (or last) `n` records.
    pub fn window_mean(&self, n: usize, last: bool, f: impl Fn(&LossRecord) -> f64) -> f64 {
        let n = n.min(self.records.len()).max(1);
        let slice = if last {
            &self.records[self.records.len().saturating_sub(n)..]
        } else {
            &self.records[..n.min(self.records.len())]
        };
        slice.iter().map(f).sum::<f64>() / slice.len().max(1) as f64
    }
}

/// Applies one clipped SGD update to unfrozen tensors; returns the pre-clip norm.
pub fn sgd_step(params: &mut ModelParams, grads: &ParamGrads, lr: f64, clip_norm: f64, frozen: &BTreeSet<Component>) -> Result<f64> {
    let trainable = |name: &str| Component::of(name).map(|t| !frozen.contains(&t));
    let mut sq = 0.0;
    for (name, g) in grads {
        if trainable(name)? {
            sq += g.iter().map(|x| x * x).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if !norm.is_finite() {
        return Ok(norm);
    }
    let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    for (name, g) in grads {
        if !trainable(name)? {
            continue;
        }
        let t = params
            .get_mut(name)
            .ok_or_else(|| Error::Incompatible(format!("gradient for unknown tensor {name}")))?;
        for (w, d) in t.data_mut().iter_mut().zip(g) {
            *w -= lr * scale * d;
        }
    }
    Ok(norm)
}

fn draw_batch<'c>(rng: &mut LabRng, pool: &'c [Utterance], n: usize) -> Vec<&'c Utterance> {
    (0..n).map(|_| &pool[rng.random_range(0..pool.len())]).collect()
}

fn effective_frozen(params: &ModelParams, config: &TrainConfig) -> BTreeSet<Component> {
    params.frozen().union(&config.frozen).copied().collect()
}

fn record(step: usize, lr: f64, total: f64, parts: &[LossBundle]) -> LossRecord {
    let mut r = LossRecord {
        step,
        total,
        task_speech: 0.0,
        task_text: 0.0,
        consistency: 0.0,
        duration: 0.0,
        contrastive: 0.0,
        learning_rate: lr,
    };
    for b in parts {
        r.task_speech += b.task_loss_speech;
        r.task_text += b.task_loss_text;
        r.consistency += b.consistency;
        r.duration += b.duration;
        r.contrastive += b.contrastive;
    }
    r
}

/// Paired gradient descent on `corpus`, starting from `params`.
pub fn pretrain_paired(mut params: ModelParams, corpus: &Corpus, config: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    if config.paired_count == 0 {
        return Err(Error::Config("paired_count must be at least 1".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Input("empty training corpus".into()));
    }
    let frozen = effective_frozen(&params, config);
    let mut rng = rng_stream(config.seed, 3);
    let mut log = TrainLog::default();
    for step in 0..config.steps {
        let batch = draw_batch(&mut rng, &corpus.utterances, config.paired_count);
        let lr = config.lr_at(step);
        let (grads, rec) = {
            let mut s = Session::new(&params);
            let bundle = forward_paired(&mut s, &batch, &config.forward)?;
            let total = s.graph.scalar(bundle.total);
            if !total.is_finite() {
                return Err(Error::Divergence {
                    step,
                    what: format!("total loss {total}"),
                });
            }
            (s.gradients(bundle.total), record(step, lr, total, &[bundle]))
        };
        let norm = sgd_step(&mut params, &grads, lr, config.clip_norm, &frozen)?;
        if !norm.is_finite() {
            return Err(Error::Divergence {
                step,
                what: "non-finite gradient".into(),
            });
        }
        log.records.push(rec);
    }
    Ok((params, log))
}

/// Continues training with target-domain text mixed with source paired data.
pub fn adapt_text_only(
    mut params: ModelParams,
    target_text: &[Vec<usize>],
    source_paired: &Corpus,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    if target_text.is_empty() || target_text.iter().any(Vec::is_empty) {
        return Err(Error::Input("target text must be a non-empty list of non-empty sequences".into()));
    }
    if config.text_count == 0 {
        return Err(Error::Config("text_count must be at least 1".into()));
    }
    if config.paired_count == 0 && !config.allow_text_only {
        return Err(Error::Config(
            "paired_count = 0 needs allow_text_only; unsupervised-only adaptation is unstable".into(),
        ));
    }
    if config.paired_count > 0 && source_paired.is_empty() {
        return Err(Error::Input("empty source paired corpus".into()));
    }
    let frozen = effective_frozen(&params, config);
    let mut rng = rng_stream(config.seed, 4);
    let mut log = TrainLog::default();
    for step in 0..config.steps {
        let texts: Vec<&[usize]> = (0..config.text_count)
            .map(|_| target_text[rng.random_range(0..target_text.len())].as_slice())
            .collect();
        let batch = if config.paired_count > 0 {
            draw_batch(&mut rng, &source_paired.utterances, config.paired_count)
        } else {
            Vec::new()
        };
        let lr = config.lr_at(step);
        let (grads, rec) = {
            let mut s = Session::new(&params);
            let text = forward_text_only(&mut s, &texts)?;
            let mut parts = vec![text];
            let mut terms = vec![(text.total, config.forward.weights.task)];
            if !batch.is_empty() {
                let paired = forward_paired(&mut s, &batch, &config.forward)?;
                terms.push((paired.total, 1.0));
                parts.push(paired);
            }
            let total_var = s.graph.weighted_sum(&terms)?;
            let total = s.graph.scalar(total_var);
            if !total.is_finite() {
                return Err(Error::Divergence {
                    step,
                    what: format!("total loss {total}"),
                });
            }
            (s.gradients(total_var), record(step, lr, total, &parts))
        };
        let norm = sgd_step(&mut params, &grads, lr, config.clip_norm, &frozen)?;
        if !norm.is_finite() {
            return Err(Error::Divergence {
                step,
                what: "non-finite gradient".into(),
            });
        }
        log.records.push(rec);
    }
    Ok((params, log))
}

/// `base` with every tensor under `tags` taken from `donor`.
pub fn swap_components(base: &ModelParams, donor: &ModelParams, tags: &[Component]) -> Result<ModelParams> {
    if base.config() != donor.config() {
        return Err(Error::Incompatible(format!(
            "model configs differ: base [{}] vs donor [{}]",
            base.config().to_echo().replace('\n', "; "),
            donor.config().to_echo().replace('\n', "; ")
        )));
    }
    let mut out = base.clone();
    for &tag in tags {
        out.copy_tag_from(donor, tag);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
