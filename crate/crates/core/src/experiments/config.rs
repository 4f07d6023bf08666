use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::analysis::{AsifConfig, TsneConfig};
use crate::encoders::{Component, FusionMode, ModelConfig, Tap};
use crate::error::{Error, Result};
use crate::persist::{Entry, IniDoc};
use crate::synthcorpus::DomainKnobs;
use crate::training::{LrSchedule, TrainConfig};

/// Corpus sizes used by the pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusSizes {
    /// Paired training utterances per domain; also the size of the target text list.
    pub train: usize,
    /// Test utterances per domain for error rates and consistency.
    pub test: usize,
    /// Paired test utterances embedded for retrieval probes.
    pub probe: usize,
}

impl Default for CorpusSizes {
    fn default() -> Self {
        Self {
            train: 1000,
            test: 200,
            probe: 1000,
        }
    }
}

/// Resolved experiment settings. Every field has a default; the `[experiment]`
/// seed drives every other seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub source_preset: String,
    pub source: DomainKnobs,
    pub target_preset: String,
    pub target: DomainKnobs,
    pub corpus: CorpusSizes,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub adapt: TrainConfig,
    /// Steps used to fit a domain-specific duration predictor and refiner.
    pub encoder_steps: usize,
    /// Median token durations of the duration-mismatch variants.
    pub duration_variants: Vec<f64>,
    pub probe: AsifConfig,
    pub tsne: TsneConfig,
    /// Paired items projected by t-SNE (two points each).
    pub tsne_pairs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            name: "default".into(),
            seed: 0,
            source_preset: "read".into(),
            source: DomainKnobs::read(),
            target_preset: "spontaneous".into(),
            target: DomainKnobs::spontaneous(),
            corpus: CorpusSizes::default(),
            model: ModelConfig::default(),
            train: TrainConfig::pretrain(),
            adapt: TrainConfig::adapt(),
            encoder_steps: 150,
            duration_variants: vec![2.5, 4.0, 6.4],
            probe: AsifConfig::default(),
            tsne: TsneConfig::default(),
            tsne_pairs: 300,
        };
        cfg.apply_seed();
        cfg
    }
}

const SECTIONS: [&str; 9] = ["experiment", "source", "target", "corpus", "model", "train", "adapt", "probe", "tsne"];

fn bad_value(key: &str, value: &str, want: &str) -> Error {
    Error::Config(format!("`{key}` expects {want}, got `{value}`"))
}

fn uint(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| bad_value(key, v, "an unsigned integer"))
}

fn real(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| bad_value(key, v, "a finite number"))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad_value(key, v, "true or false")),
    }
}

fn set_knob(k: &mut DomainKnobs, key: &str, v: &str) -> Result<bool> {
    match key {
        "id" => k.id = v.to_string(),
        "vocab" => k.vocab = uint(key, v)?,
        "feature_dim" => k.feature_dim = uint(key, v)?,
        "median_duration" => k.median_duration = real(key, v)?,
        "duration_sigma" => k.duration_sigma = real(key, v)?,
        "token_duration_spread" => k.token_duration_spread = real(key, v)?,
        "noise" => k.noise = real(key, v)?,
        "min_tokens" => k.min_tokens = uint(key, v)?,
        "max_tokens" => k.max_tokens = uint(key, v)?,
        "max_token_frames" => k.max_token_frames = uint(key, v)?,
        "zipf_exponent" => k.zipf_exponent = real(key, v)?,
        "rank_shift" => k.rank_shift = uint(key, v)?,
        "prototype_separation" => k.prototype_separation = real(key, v)?,
        "prototype_seed" => k.prototype_seed = uint(key, v)? as u64,
        _ => return Ok(false),
    }
    Ok(true)
}

fn knob_lines(out: &mut String, preset: &str, k: &DomainKnobs) {
    let _ = writeln!(out, "preset = {preset}");
    let _ = writeln!(out, "id = {}", k.id);
    let _ = writeln!(out, "vocab = {}", k.vocab);
    let _ = writeln!(out, "feature_dim = {}", k.feature_dim);
    let _ = writeln!(out, "median_duration = {}", k.median_duration);
    let _ = writeln!(out, "duration_sigma = {}", k.duration_sigma);
    let _ = writeln!(out, "token_duration_spread = {}", k.token_duration_spread);
    let _ = writeln!(out, "noise = {}", k.noise);
    let _ = writeln!(out, "min_tokens = {}", k.min_tokens);
    let _ = writeln!(out, "max_tokens = {}", k.max_tokens);
    let _ = writeln!(out, "max_token_frames = {}", k.max_token_frames);
    let _ = writeln!(out, "zipf_exponent = {}", k.zipf_exponent);
    let _ = writeln!(out, "rank_shift = {}", k.rank_shift);
    let _ = writeln!(out, "prototype_separation = {}", k.prototype_separation);
    let _ = writeln!(out, "prototype_seed = {}", k.prototype_seed);
}

fn parse_tags(v: &str) -> Result<BTreeSet<Component>> {
    v.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(Component::parse)
        .collect()
}

fn tag_list(tags: &BTreeSet<Component>) -> String {
    tags.iter().map(|t| t.name()).collect::<Vec<_>>().join(", ")
}

fn set_train(t: &mut TrainConfig, key: &str, v: &str, adapt: bool) -> Result<bool> {
    let w = &mut t.forward.weights;
    match key {
        "steps" => t.steps = uint(key, v)?,
        "learning_rate" => t.learning_rate = real(key, v)?,
        "schedule" => t.schedule = LrSchedule::parse(v)?,
        "paired_count" => t.paired_count = uint(key, v)?,
        "clip_norm" => t.clip_norm = real(key, v)?,
        "frozen" => t.frozen = parse_tags(v)?,
        "weight_task" => w.task = real(key, v)?,
        "weight_consistency" => w.consistency = real(key, v)?,
        "weight_duration" => w.duration = real(key, v)?,
        "weight_contrastive" => w.contrastive = real(key, v)?,
        "temperature" => t.forward.temperature = real(key, v)?,
        "consistency_tap" => t.forward.consistency_tap = Tap::parse(v)?,
        "speech_is_target" => t.forward.speech_is_target = flag(key, v)?,
        "text_count" if adapt => t.text_count = uint(key, v)?,
        "allow_text_only" if adapt => t.allow_text_only = flag(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn train_lines(out: &mut String, t: &TrainConfig, adapt: bool) {
    let w = &t.forward.weights;
    let _ = writeln!(out, "steps = {}", t.steps);
    let _ = writeln!(out, "learning_rate = {}", t.learning_rate);
    let _ = writeln!(out, "schedule = {}", t.schedule.name());
    let _ = writeln!(out, "paired_count = {}", t.paired_count);
    if adapt {
        let _ = writeln!(out, "text_count = {}", t.text_count);
        let _ = writeln!(out, "allow_text_only = {}", t.allow_text_only);
    }
    let _ = writeln!(out, "clip_norm = {}", t.clip_norm);
    let _ = writeln!(out, "frozen = {}", tag_list(&t.frozen));
    let _ = writeln!(out, "weight_task = {}", w.task);
    let _ = writeln!(out, "weight_consistency = {}", w.consistency);
    let _ = writeln!(out, "weight_duration = {}", w.duration);
    let _ = writeln!(out, "weight_contrastive = {}", w.contrastive);
    let _ = writeln!(out, "temperature = {}", t.forward.temperature);
    let _ = writeln!(out, "consistency_tap = {}", t.forward.consistency_tap.name());
    let _ = writeln!(out, "speech_is_target = {}", t.forward.speech_is_target);
}

impl ExperimentConfig {
    /// Propagates the experiment seed to every seeded component.
    fn apply_seed(&mut self) {
        self.model.seed = self.seed;
        self.train.seed = self.seed;
        self.adapt.seed = self.seed;
        self.probe.seed = self.seed;
        self.tsne.seed = self.seed;
    }

    /// Copy with a different experiment seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.apply_seed();
        c
    }

    /// Seed of the generated source domain and its corpora.
    pub fn source_seed(&self) -> u64 {
        1 + 10 * self.seed
    }

    /// Seed of the generated target domain and its corpora.
    pub fn target_seed(&self) -> u64 {
        2 + 10 * self.seed
    }

    /// Parses the config grammar. `preset` keys apply before the other keys of
    /// their section regardless of position; unknown sections and keys fail.
    pub fn parse(text: &str) -> Result<Self> {
        let doc = IniDoc::parse(text)?;
        let mut cfg = ExperimentConfig::default();
        for (section, _) in &doc.sections {
            if !SECTIONS.contains(&section.as_str()) {
                return Err(Error::Config(format!("unknown section [{section}] ({})", SECTIONS.join(", "))));
            }
        }
        let at = |e: &Entry, section: &str, err: Error| match err {
            Error::Config(m) => Error::Config(format!("line {} [{section}] {}: {m}", e.line, e.key)),
            other => other,
        };
        for (section, entries) in &doc.sections {
            for domain in ["source", "target"] {
                if section != domain {
                    continue;
                }
                if let Some(p) = entries.iter().find(|e| e.key == "preset") {
                    let knobs = DomainKnobs::preset(&p.value).map_err(|e| at(p, section, e))?;
                    if domain == "source" {
                        cfg.source = knobs;
                        cfg.source_preset = p.value.clone();
                    } else {
                        cfg.target = knobs;
                        cfg.target_preset = p.value.clone();
                    }
                }
            }
        }
        for (section, entries) in &doc.sections {
            for e in entries {
                cfg.set(section, &e.key, &e.value).map_err(|err| at(e, section, err))?;
            }
        }
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<()> {
        let unknown = || Err(Error::Config(format!("unknown key `{key}` in [{section}]")));
        match section {
            "experiment" => match key {
                "name" => self.name = v.to_string(),
                "seed" => self.seed = uint(key, v)? as u64,
                "duration_variants" => {
                    self.duration_variants = v
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| real(key, s))
                        .collect::<Result<_>>()?
                }
                _ => return unknown(),
            },
            "source" | "target" => {
                if key == "preset" {
                    return Ok(());
                }
                let knobs = if section == "source" { &mut self.source } else { &mut self.target };
                if !set_knob(knobs, key, v)? {
                    return unknown();
                }
            }
            "corpus" => match key {
                "train" => self.corpus.train = uint(key, v)?,
                "test" => self.corpus.test = uint(key, v)?,
                "probe" => self.corpus.probe = uint(key, v)?,
                _ => return unknown(),
            },
            "model" => match key {
                "seed" => return Err(Error::Config("the model seed follows [experiment] seed".into())),
                "width" | "speech_depth" | "shared_depth" | "refiner_depth" | "vocab" | "feature_dim" | "fusion" => {
                    self.model.set(key, v)?
                }
                _ => return unknown(),
            },
            "train" => {
                if !set_train(&mut self.train, key, v, false)? {
                    return unknown();
                }
            }
            "adapt" => {
                if key == "encoder_steps" {
                    self.encoder_steps = uint(key, v)?;
                } else if !set_train(&mut self.adapt, key, v, true)? {
                    return unknown();
                }
            }
            "probe" => match key {
                "trials" => self.probe.trials = uint(key, v)?,
                "anchor_fraction" => self.probe.anchor_fraction = real(key, v)?,
                "eval_count" => self.probe.eval_count = uint(key, v)?,
                "k" => self.probe.k = uint(key, v)?,
                "power" => self.probe.power = real(key, v)?,
                _ => return unknown(),
            },
            "tsne" => match key {
                "perplexity" => self.tsne.perplexity = real(key, v)?,
                "iterations" => self.tsne.iterations = uint(key, v)?,
                "learning_rate" => self.tsne.learning_rate = real(key, v)?,
                "exaggeration" => self.tsne.exaggeration = real(key, v)?,
                "exaggeration_steps" => self.tsne.exaggeration_steps = uint(key, v)?,
                "pairs" => self.tsne_pairs = uint(key, v)?,
                _ => return unknown(),
            },
            _ => return unknown(),
        }
        Ok(())
    }

    /// Cross-section consistency checks.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.adapt.validate()?;
        for (side, k) in [("source", &self.source), ("target", &self.target)] {
            if k.vocab != self.model.vocab || k.feature_dim != self.model.feature_dim {
                return Err(Error::Config(format!(
                    "[{side}] vocab/feature_dim ({}, {}) disagree with [model] ({}, {})",
                    k.vocab, k.feature_dim, self.model.vocab, self.model.feature_dim
                )));
            }
        }
        if self.source.id == self.target.id {
            return Err(Error::Config("source and target domains need distinct ids".into()));
        }
        if self.corpus.train == 0 || self.corpus.test == 0 || self.corpus.probe < 2 {
            return Err(Error::Config("corpus sizes must be positive (probe ≥ 2)".into()));
        }
        if self.duration_variants.iter().any(|&m| !(m >= 1.0)) {
            return Err(Error::Config("duration variants must be ≥ 1 frame".into()));
        }
        if self.tsne_pairs < 2 {
            return Err(Error::Config("t-SNE needs at least 2 pairs".into()));
        }
        Ok(())
    }

    /// Every key in canonical order; parsing the result reproduces `self`.
    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[experiment]\nname = {}\nseed = {}", self.name, self.seed);
        let variants: Vec<String> = self.duration_variants.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "duration_variants = {}", variants.join(", "));
        out.push_str("\n[source]\n");
        knob_lines(&mut out, &self.source_preset, &self.source);
        out.push_str("\n[target]\n");
        knob_lines(&mut out, &self.target_preset, &self.target);
        let _ = writeln!(
            out,
            "\n[corpus]\ntrain = {}\ntest = {}\nprobe = {}",
            self.corpus.train, self.corpus.test, self.corpus.probe
        );
        out.push_str("\n[model]\n");
        for line in self.model.to_echo().lines().filter(|l| !l.starts_with("seed")) {
            let _ = writeln!(out, "{line}");
        }
        out.push_str("\n[train]\n");
        train_lines(&mut out, &self.train, false);
        out.push_str("\n[adapt]\n");
        train_lines(&mut out, &self.adapt, true);
        let _ = writeln!(out, "encoder_steps = {}", self.encoder_steps);
        let p = &self.probe;
        let _ = writeln!(
            out,
            "\n[probe]\ntrials = {}\nanchor_fraction = {}\neval_count = {}\nk = {}\npower = {}",
            p.trials, p.anchor_fraction, p.eval_count, p.k, p.power
        );
        let t = &self.tsne;
        let _ = writeln!(
            out,
            "\n[tsne]\nperplexity = {}\niterations = {}\nlearning_rate = {}\nexaggeration = {}\nexaggeration_steps = {}\npairs = {}",
            t.perplexity, t.iterations, t.learning_rate, t.exaggeration, t.exaggeration_steps, self.tsne_pairs
        );
        out
    }

    /// The config as `# `-prefixed lines, for embedding in text artifacts.
    pub fn echo_comment(&self) -> String {
        self.to_ini()
            .lines()
            .map(|l| if l.is_empty() { "#".to_string() } else { format!("# {l}") })
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    }

    /// Model config for a given fusion mode.
    pub fn model_for(&self, fusion: FusionMode) -> ModelConfig {
        ModelConfig {
            fusion,
            ..self.model.clone()
        }
    }
}
