//! Seeded generator of paired "speech" frames and token sequences.
//!
//! A domain fixes one prototype feature vector per token, per-token
//! log-normal duration parameters, a unigram distribution over tokens and a
//! frame noise level. An utterance repeats each token's prototype for its
//! duration and adds Gaussian noise, so gold alignments are exact.
//!
//! Randomness: every draw comes from ChaCha8 keyed by a 64-bit seed. Utterance
//! `i` of split `s` uses stream `(s << 32) | i` of the corpus seed, with
//! `s = 1` for train and `s = 2` for test, so streams never overlap and
//! generation order does not matter.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{rng_stream, LabRng, Tensor};

/// Tunable generation parameters for one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainKnobs {
    pub id: String,
    pub vocab: usize,
    pub feature_dim: usize,
    /// Median token duration in frames (`μ = ln median`).
    pub median_duration: f64,
    /// Log-normal σ, in log-frames.
    pub duration_sigma: f64,
    /// Std. dev. of per-token offsets added to `μ`.
    pub token_duration_spread: f64,
    pub noise: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub max_token_frames: usize,
    /// Zipf exponent of the unigram distribution (0 = uniform).
    pub zipf_exponent: f64,
    /// Rotation applied to token ranks before the Zipf weighting.
    pub rank_shift: usize,
    /// Target minimum pairwise distance between prototypes.
    pub prototype_separation: f64,
    /// Seed of the prototype matrix; shared by domains unless overridden.
    pub prototype_seed: u64,
}

impl Default for DomainKnobs {
    fn default() -> Self {
        Self::read()
    }
}

impl DomainKnobs {
    /// Slow, regular, clean speech.
    pub fn read() -> Self {
        Self {
            id: "read".into(),
            vocab: 24,
            feature_dim: 16,
            median_duration: 4.0,
            duration_sigma: 0.2,
            token_duration_spread: 0.15,
            noise: 0.3,
            min_tokens: 3,
            max_tokens: 7,
            max_token_frames: 12,
            zipf_exponent: 1.6,
            rank_shift: 0,
            prototype_separation: 10.0,
            prototype_seed: 7,
        }
    }

    /// Fast, irregular, noisier speech with a different token distribution.
    pub fn spontaneous() -> Self {
        Self {
            id: "spontaneous".into(),
            median_duration: 2.5,
            duration_sigma: 0.6,
            noise: 0.5,
            zipf_exponent: 1.0,
            rank_shift: 12,
            ..Self::read()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "read" => Ok(Self::read()),
            "spontaneous" => Ok(Self::spontaneous()),
            other => Err(Error::Config(format!("unknown domain preset `{other}` (read, spontaneous)"))),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("domain `{}`: {m}", self.id)));
        if self.vocab < 2 || self.feature_dim < 1 {
            return bad("vocab must be ≥ 2 and feature_dim ≥ 1");
        }
        if !(self.median_duration >= 1.0) || !(self.duration_sigma > 0.0) || self.token_duration_spread < 0.0 {
            return bad("median_duration must be ≥ 1, duration_sigma > 0, spread ≥ 0");
        }
        if !(self.noise >= 0.0) || self.zipf_exponent < 0.0 {
            return bad("noise and zipf_exponent must be non-negative");
        }
        if self.min_tokens < 1 || self.max_tokens < self.min_tokens || self.max_token_frames < 1 {
            return bad("token range must satisfy 1 ≤ min_tokens ≤ max_tokens, max_token_frames ≥ 1");
        }
        if !(self.prototype_separation > 0.0) {
            return bad("prototype_separation must be positive");
        }
        Ok(())
    }
}

/// Fully specified generative domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub id: String,
    /// Row `k-1` is the prototype of token `k`.
    pub prototypes: Tensor,
    pub duration_mu: Vec<f64>,
    pub duration_sigma: Vec<f64>,
    pub unigram: Vec<f64>,
    pub noise: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub max_token_frames: usize,
}

impl DomainSpec {
    pub fn vocab(&self) -> usize {
        self.unigram.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn prototype(&self, token: usize) -> &[f64] {
        self.prototypes.row(token - 1)
    }

    /// Smallest pairwise L2 distance between prototypes.
    pub fn min_prototype_distance(&self) -> f64 {
        min_pairwise_distance(&self.prototypes)
    }

    /// Checks the structural invariants of a (possibly deserialized) spec.
    pub fn validate(&self) -> Result<()> {
        let v = self.vocab();
        let bad = |m: String| Err(Error::Generation(format!("domain `{}`: {m}", self.id)));
        if self.prototypes.rows() != v || self.duration_mu.len() != v || self.duration_sigma.len() != v {
            return bad("per-token tables disagree on vocabulary size".into());
        }
        if self.duration_sigma.iter().any(|&s| !(s > 0.0)) {
            return bad("duration sigma must be positive".into());
        }
        let total: f64 = self.unigram.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.unigram.iter().any(|&w| w < 0.0) {
            return bad(format!("unigram weights sum to {total}"));
        }
        let need = 4.0 * self.noise * (self.feature_dim() as f64).sqrt();
        let have = self.min_prototype_distance();
        if have <= need {
            return bad(format!("prototype separation {have:.3} ≤ 4·σ·√F = {need:.3}"));
        }
        Ok(())
    }
}

fn min_pairwise_distance(p: &Tensor) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..p.rows() {
        for j in i + 1..p.rows() {
            let d: f64 = p.row(i).iter().zip(p.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            best = best.min(d.sqrt());
        }
    }
    best
}

/// Builds a domain from knobs. Prototypes come from `knobs.prototype_seed`;
/// per-token duration offsets come from `seed`.
pub fn make_domain(knobs: &DomainKnobs, seed: u64) -> Result<DomainSpec> {
    knobs.validate()?;
    let (v, f) = (knobs.vocab, knobs.feature_dim);
    let mut proto_rng = rng_stream(knobs.prototype_seed, 0);
    let raw: Vec<f64> = (0..v * f).map(|_| StandardNormal.sample(&mut proto_rng)).collect();
    let mut prototypes = Tensor::matrix(v, f, raw)?;
    let current = min_pairwise_distance(&prototypes);
    if !(current > 0.0) {
        return Err(Error::Generation("sampled prototypes coincide".into()));
    }
    let scale = knobs.prototype_separation / current;
    prototypes.data_mut().iter_mut().for_each(|x| *x *= scale);

    let need = 4.0 * knobs.noise * (f as f64).sqrt();
    if knobs.prototype_separation <= need {
        return Err(Error::Generation(format!(
            "separation {} cannot exceed 4·σ·√F = {need:.3} for V={v}, F={f}, noise={}",
            knobs.prototype_separation, knobs.noise
        )));
    }

    let mut dur_rng = rng_stream(seed, 1);
    let base = knobs.median_duration.ln();
    let duration_mu = (0..v)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut dur_rng);
            base + knobs.token_duration_spread * z
        })
        .collect();
    let duration_sigma = vec![knobs.duration_sigma; v];

    let raw: Vec<f64> = (0..v)
        .map(|k| {
            let rank = (k + knobs.rank_shift) % v + 1;
            (rank as f64).powf(-knobs.zipf_exponent)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let unigram = raw.iter().map(|w| w / total).collect();

    let spec = DomainSpec {
        id: knobs.id.clone(),
        prototypes,
        duration_mu,
        duration_sigma,
        unigram,
        noise: knobs.noise,
        min_tokens: knobs.min_tokens,
        max_tokens: knobs.max_tokens,
        max_token_frames: knobs.max_token_frames,
    };
    spec.validate()?;
    Ok(spec)
}

/// Paired frames and tokens with exact per-token durations.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub domain: String,
    /// Token ids in `1..=V`.
    pub tokens: Vec<usize>,
    /// Frames per token, each ≥ 1.
    pub durations: Vec<usize>,
    /// `T×F`, `T = Σ durations`.
    pub frames: Tensor,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn mean_duration(&self) -> f64 {
        self.durations.iter().sum::<usize>() as f64 / self.durations.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let sum: usize = self.durations.iter().sum();
        if sum != self.num_frames() {
            return Err(Error::Alignment {
                sum,
                frames: self.num_frames(),
            });
        }
        if self.tokens.len() != self.durations.len() || self.tokens.is_empty() {
            return Err(Error::Input(format!("utterance {} has mismatched token/duration counts", self.id)));
        }
        if self.durations.contains(&0) {
            return Err(Error::Input(format!("utterance {} has a zero duration", self.id)));
        }
        Ok(())
    }
}

/// Round half up, clamped to `[1, max]`.
pub(crate) fn round_duration(x: f64, max: usize) -> usize {
    let r = (x + 0.5).floor();
    if r < 1.0 {
        1
    } else {
        (r as usize).min(max)
    }
}

fn sample_token(rng: &mut LabRng, unigram: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, w) in unigram.iter().enumerate() {
        acc += w;
        if u < acc {
            return k + 1;
        }
    }
    unigram.len()
}

/// Draws one utterance from `spec` using `rng`.
pub fn sample_utterance_with(spec: &DomainSpec, id: String, rng: &mut LabRng) -> Utterance {
    let u = rng.random_range(spec.min_tokens..=spec.max_tokens);
    let tokens: Vec<usize> = (0..u).map(|_| sample_token(rng, &spec.unigram)).collect();
    let durations: Vec<usize> = tokens
        .iter()
        .map(|&k| {
            let z: f64 = StandardNormal.sample(rng);
            let d = (spec.duration_mu[k - 1] + spec.duration_sigma[k - 1] * z).exp();
            round_duration(d, spec.max_token_frames)
        })
        .collect();
    let f = spec.feature_dim();
    let total: usize = durations.iter().sum();
    let mut data = Vec::with_capacity(total * f);
    for (&k, &d) in tokens.iter().zip(&durations) {
        for _ in 0..d {
            for &p in spec.prototype(k) {
                let noise = if spec.noise > 0.0 {
                    let z: f64 = StandardNormal.sample(rng);
                    spec.noise * z
                } else {
                    0.0
                };
                data.push(p + noise);
            }
        }
    }
    Utterance {
        id,
        domain: spec.id.clone(),
        tokens,
        durations,
        frames: Tensor::matrix(total, f, data).expect("at least one frame"),
    }
}

/// One utterance from its own generator stream keyed by `seed`.
pub fn sample_utterance(spec: &DomainSpec, seed: u64) -> Utterance {
    let mut rng = rng_stream(seed, 0);
    sample_utterance_with(spec, format!("{}-{seed}", spec.id), &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn code(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Split::Train),
            2 => Some(Split::Test),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}` (train, test)"))),
        }
    }
}

/// A generated set of utterances from one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: DomainSpec,
    pub split: Split,
    pub seed: u64,
    pub utterances: Vec<Utterance>,
}

/// Generator stream used for utterance `index` of `split`.
pub fn utterance_stream(split: Split, index: usize) -> u64 {
    (split.code() << 32) | index as u64
}

pub fn make_corpus(spec: &DomainSpec, n: usize, split: Split, seed: u64) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::Input("corpus size must be at least 1".into()));
    }
    if n > u32::MAX as usize {
        return Err(Error::Input("corpus size exceeds 2^32".into()));
    }
    let utterances = (0..n)
        .map(|i| {
            let mut rng = rng_stream(seed, utterance_stream(split, i));
            sample_utterance_with(spec, format!("{}-{}-{i:05}", spec.id, split.name()), &mut rng)
        })
        .collect();
    Ok(Corpus {
        spec: spec.clone(),
        split,
        seed,
        utterances,
    })
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Token sequences only (text-only data).
    pub fn texts(&self) -> Vec<Vec<usize>> {
        self.utterances.iter().map(|u| u.tokens.clone()).collect()
    }

    pub fn mean_duration(&self) -> f64 {
        let (sum, count) = self
            .utterances
            .iter()
            .fold((0usize, 0usize), |(s, c), u| (s + u.durations.iter().sum::<usize>(), c + u.durations.len()));
        sum as f64 / count as f64
    }
}

/// Fraction of frames whose nearest prototype is their gold token.
pub fn nearest_prototype_accuracy(corpus: &Corpus) -> f64 {
    let spec = &corpus.spec;
    let mut right = 0usize;
    let mut total = 0usize;
    for u in &corpus.utterances {
        let mut frame = 0;
        for (&tok, &d) in u.tokens.iter().zip(&u.durations) {
            for _ in 0..d {
                let x = u.frames.row(frame);
                let best = (1..=spec.vocab())
                    .min_by(|&a, &b| {
                        let da: f64 = x.iter().zip(spec.prototype(a)).map(|(p, q)| (p - q) * (p - q)).sum();
                        let db: f64 = x.iter().zip(spec.prototype(b)).map(|(p, q)| (p - q) * (p - q)).sum();
                        da.total_cmp(&db)
                    })
                    .expect("vocab ≥ 1");
                right += usize::from(best == tok);
                total += 1;
                frame += 1;
            }
        }
    }
    right as f64 / total as f64
}

#[cfg(test)]
mod tests;
