use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use super::embed::{EmbeddingSet, PairedSet};
use crate::error::{Error, IdList, Result};
use crate::numerics::{dot, l2_norm, rng_stream};

/// Retrieval accuracy over one or more trials.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub probe: &'static str,
    pub trial_accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Queries whose best score was shared by more than one candidate.
    pub ties: usize,
    /// `key = value` lines describing the probe settings.
    pub config: String,
}

impl ProbeResult {
    fn from_trials(probe: &'static str, trial_accuracies: Vec<f64>, ties: usize, config: String) -> Self {
        let n = trial_accuracies.len() as f64;
        let mean = trial_accuracies.iter().sum::<f64>() / n;
        let var = trial_accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        Self {
            probe,
            trial_accuracies,
            mean,
            std: var.sqrt(),
            ties,
            config,
        }
    }

    pub fn accuracy(&self) -> f64 {
        self.mean
    }

    pub fn trials(&self) -> usize {
        self.trial_accuracies.len()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("probe = {}\n{}", self.probe, self.config);
        let _ = writeln!(out, "trials = {}", self.trials());
        let _ = writeln!(out, "accuracy = {:.6}", self.mean);
        let _ = writeln!(out, "std = {:.6}", self.std);
        let _ = writeln!(out, "ties = {}", self.ties);
        out
    }
}

/// Unit-normalized copies; zero vectors are reported by id.
fn normalized(vectors: &[&[f64]], ids: &[&str]) -> Result<Vec<Vec<f64>>> {
    let zero: Vec<String> = vectors
        .iter()
        .zip(ids)
        .filter(|(v, _)| !(l2_norm(v) > 0.0))
        .map(|(_, id)| id.to_string())
        .collect();
    if !zero.is_empty() {
        return Err(Error::Normalization(IdList(&zero).to_string()));
    }
    Ok(vectors
        .iter()
        .map(|v| {
            let n = l2_norm(v);
            v.iter().map(|x| x / n).collect()
        })
        .collect())
}

fn normalized_set(set: &EmbeddingSet) -> Result<Vec<Vec<f64>>> {
    let ids: Vec<&str> = set.items.iter().map(|e| e.id.as_str()).collect();
    let vecs: Vec<&[f64]> = set.items.iter().map(|e| e.vector.as_slice()).collect();
    normalized(&vecs, &ids)
}

/// Index of the best score (lower index wins ties) and whether it was tied.
fn best(scores: &[f64]) -> (usize, bool) {
    let mut top = 0;
    let mut tied = false;
    for (j, &s) in scores.iter().enumerate().skip(1) {
        match s.partial_cmp(&scores[top]) {
            Some(Ordering::Greater) => {
                top = j;
                tied = false;
            }
            Some(Ordering::Equal) => tied = true,
            _ => {}
        }
    }
    (top, tied)
}

/// Speech-to-text top-1 retrieval by cosine over the full paired set.
pub fn cosine_retrieval_probe(pairs: &PairedSet) -> Result<ProbeResult> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::Input(format!("retrieval needs at least 2 pairs, got {n}")));
    }
    let speech = normalized_set(&pairs.speech)?;
    let text = normalized_set(&pairs.text)?;
    let mut hits = 0;
    let mut ties = 0;
    let mut scores = vec![0.0; n];
    for (i, q) in speech.iter().enumerate() {
        for (s, t) in scores.iter_mut().zip(&text) {
            *s = dot(q, t);
        }
        let (top, tied) = best(&scores);
        hits += usize::from(top == i);
        ties += usize::from(tied);
    }
    let config = format!(
        "direction = speech_to_text\ntap = {}\ncandidates = {n}\n",
        pairs.speech.tap.name()
    );
    Ok(ProbeResult::from_trials("direct", vec![hits as f64 / n as f64], ties, config))
}

/// Sparse relative representation of `query` against `anchors`.
///
/// Cosine similarity to every anchor, keep the `k` largest (lower index wins
/// ties), map kept values to `sign(s)·|s|^p`, then L2-normalize. An all-zero
/// result is returned as is.
pub fn asif_relative(query: &[f64], anchors: &[&[f64]], k: usize, p: f64) -> Result<Vec<f64>> {
    if k == 0 || k > anchors.len() {
        return Err(Error::Config(format!("k must be in 1..={}, got {k}", anchors.len())));
    }
    if !(p >= 1.0) {
        return Err(Error::Config(format!("power must be ≥ 1, got {p}")));
    }
    let qn = l2_norm(query);
    if !(qn > 0.0) {
        return Err(Error::Normalization("[query]".into()));
    }
    let sims: Vec<f64> = anchors
        .iter()
        .map(|a| {
            let an = l2_norm(a);
            if an > 0.0 {
                dot(query, a) / (qn * an)
            } else {
                0.0
            }
        })
        .collect();
    Ok(sparsify(&sims, k, p))
}

fn sparsify(sims: &[f64], k: usize, p: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    let mut out = vec![0.0; sims.len()];
    for &j in &order[..k] {
        let s = sims[j];
        out[j] = s.signum() * s.abs().powf(p);
    }
    let n = l2_norm(&out);
    if n > 0.0 {
        out.iter_mut().for_each(|x| *x /= n);
    }
    out
}

/// Settings of the anchored probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsifConfig {
    pub trials: usize,
    pub anchor_fraction: f64,
    pub eval_count: usize,
    pub k: usize,
    pub power: f64,
    pub seed: u64,
}

impl Default for AsifConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            anchor_fraction: 0.9,
            eval_count: 100,
            k: 90,
            power: 8.0,
            seed: 0,
        }
    }
}

impl AsifConfig {
    pub fn anchors_for(&self, n: usize) -> usize {
        (self.anchor_fraction * n as f64).floor() as usize
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let anchors = self.anchors_for(n);
        if self.eval_count < 2 {
            return Err(Error::Config(format!("eval_count must be ≥ 2, got {}", self.eval_count)));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be ≥ 1".into()));
        }
        if !(self.anchor_fraction > 0.0 && self.anchor_fraction < 1.0) {
            return Err(Error::Config("anchor_fraction must lie in (0, 1)".into()));
        }
        if self.k == 0 || anchors < self.k {
            return Err(Error::Config(format!(
                "k = {} needs at least that many anchors; {n} pairs give {anchors}",
                self.k
            )));
        }
        if anchors >= n {
            return Err(Error::Config("no pairs left outside the anchor set".into()));
        }
        if !(self.power >= 1.0) {
            return Err(Error::Config(format!("power must be ≥ 1, got {}", self.power)));
        }
        Ok(())
    }
}

/// Anchored retrieval: each trial shuffles the pairs into anchors and a
/// held-out pool, draws `eval_count` evaluation pairs from the pool (with
/// replacement only if the pool is smaller), and retrieves among the trial's
/// texts by cosine between relative representations. A query succeeds when
/// the retrieved candidate is its own pair.
pub fn asif_retrieval_probe(pairs: &PairedSet, cfg: &AsifConfig) -> Result<ProbeResult> {
    let n = pairs.len();
    cfg.validate(n)?;
    let speech = normalized_set(&pairs.speech)?;
    let text = normalized_set(&pairs.text)?;
    let n_anchor = cfg.anchors_for(n);
    let mut accuracies = Vec::with_capacity(cfg.trials);
    let mut ties = 0;
    for trial in 0..cfg.trials {
        let mut rng = rng_stream(cfg.seed, trial as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let (anchors, pool) = order.split_at(n_anchor);
        let eval: Vec<usize> = if pool.len() >= cfg.eval_count {
            pool[..cfg.eval_count].to_vec()
        } else {
            (0..cfg.eval_count).map(|_| pool[rng.random_range(0..pool.len())]).collect()
        };
        let relative = |side: &[Vec<f64>], idx: usize| {
            let sims: Vec<f64> = anchors.iter().map(|&a| dot(&side[idx], &side[a])).collect();
            sparsify(&sims, cfg.k, cfg.power)
        };
        let queries: Vec<Vec<f64>> = eval.iter().map(|&i| relative(&speech, i)).collect();
        let candidates: Vec<Vec<f64>> = eval.iter().map(|&i| relative(&text, i)).collect();
        let mut hits = 0;
        let mut scores = vec![0.0; eval.len()];
        for (qi, q) in queries.iter().enumerate() {
            for (s, c) in scores.iter_mut().zip(&candidates) {
                *s = dot(q, c);
            }
            let (top, tied) = best(&scores);
            hits += usize::from(eval[top] == eval[qi]);
            ties += usize::from(tied);
        }
        accuracies.push(hits as f64 / eval.len() as f64);
    }
    let config = format!(
        "tap = {}\nk = {}\npower = {}\nanchors = {n_anchor}\nanchor_fraction = {}\neval_count = {}\nseed = {}\n",
        pairs.speech.tap.name(),
        cfg.k,
        cfg.power,
        cfg.anchor_fraction,
        cfg.eval_count,
        cfg.seed
    );
    Ok(ProbeResult::from_trials("asif", accuracies, ties, config))
}
