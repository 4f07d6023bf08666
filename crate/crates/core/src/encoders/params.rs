use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::{block_param_shape, init_block, rng_from_seed, uniform_fan_in, BlockVars, Graph, Tensor, Var, BLOCK_PARAMS};

/// How speech and text modal outputs reach the shared encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionMode {
    /// Either modality alone, aligned by durations and a consistency loss.
    Maestro,
    /// Speech and text sequences concatenated into one shared pass.
    SlamConcat,
}

impl FusionMode {
    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Maestro => "maestro",
            FusionMode::SlamConcat => "slam_concat",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "maestro" => Ok(FusionMode::Maestro),
            "slam_concat" => Ok(FusionMode::SlamConcat),
            other => Err(Error::Config(format!("unknown fusion mode `{other}` (maestro, slam_concat)"))),
        }
    }
}

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub width: usize,
    pub speech_depth: usize,
    pub shared_depth: usize,
    pub refiner_depth: usize,
    /// Number of non-blank tokens; the blank takes index 0.
    pub vocab: usize,
    pub feature_dim: usize,
    pub fusion: FusionMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 32,
            speech_depth: 2,
            shared_depth: 6,
            refiner_depth: 1,
            vocab: 24,
            feature_dim: 16,
            fusion: FusionMode::Maestro,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 4 {
            return Err(Error::Config(format!("model width must be ≥ 4, got {}", self.width)));
        }
        if self.speech_depth == 0 || self.shared_depth == 0 || self.refiner_depth == 0 {
            return Err(Error::Config("encoder depths must be ≥ 1".into()));
        }
        if self.vocab == 0 || self.feature_dim == 0 {
            return Err(Error::Config("vocab and feature_dim must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Output classes including blank.
    pub fn classes(&self) -> usize {
        self.vocab + 1
    }

    /// `key = value` lines, the form echoed into checkpoints and reports.
    pub fn to_echo(&self) -> String {
        format!(
            "width = {}\nspeech_depth = {}\nshared_depth = {}\nrefiner_depth = {}\nvocab = {}\nfeature_dim = {}\nfusion = {}\nseed = {}\n",
            self.width,
            self.speech_depth,
            self.shared_depth,
            self.refiner_depth,
            self.vocab,
            self.feature_dim,
            self.fusion.name(),
            self.seed
        )
    }

    pub fn from_echo(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut seen = BTreeSet::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad config echo line `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            cfg.set(k, v)?;
            seen.insert(k.to_string());
        }
        if seen.len() != 8 {
            return Err(Error::Format("model config echo is incomplete".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Config(format!("`{key}` expects an unsigned integer, got `{v}`")))
        };
        match key {
            "width" => self.width = num(value)?,
            "speech_depth" => self.speech_depth = num(value)?,
            "shared_depth" => self.shared_depth = num(value)?,
            "refiner_depth" => self.refiner_depth = num(value)?,
            "vocab" => self.vocab = num(value)?,
            "feature_dim" => self.feature_dim = num(value)?,
            "fusion" => self.fusion = FusionMode::parse(value)?,
            "seed" => self.seed = num(value)? as u64,
            other => return Err(Error::Config(format!("unknown model key `{other}`"))),
        }
        Ok(())
    }
}

/// Parameter groups; every tensor belongs to exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    SpeechEncoder,
    TextEmbedder,
    DurationPredictor,
    Refiner,
    SharedEncoder,
    TaskDecoder,
    DurationDecoder,
}

impl Component {
    pub const ALL: [Component; 7] = [
        Component::SpeechEncoder,
        Component::TextEmbedder,
        Component::DurationPredictor,
        Component::Refiner,
        Component::SharedEncoder,
        Component::TaskDecoder,
        Component::DurationDecoder,
    ];

    /// Tags making up the text encoder.
    pub const TEXT_ENCODER: [Component; 3] = [Component::TextEmbedder, Component::DurationPredictor, Component::Refiner];

    pub fn name(self) -> &'static str {
        match self {
            Component::SpeechEncoder => "speech_encoder",
            Component::TextEmbedder => "text_embedder",
            Component::DurationPredictor => "duration_predictor",
            Component::Refiner => "refiner",
            Component::SharedEncoder => "shared_encoder",
            Component::TaskDecoder => "task_decoder",
            Component::DurationDecoder => "duration_decoder",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = Self::ALL.iter().map(|c| c.name()).collect();
            Error::Config(format!("unknown component tag `{s}`; valid tags: {}", valid.join(", ")))
        })
    }

    /// Tag of a tensor name `tag.layer.param`.
    pub fn of(name: &str) -> Result<Self> {
        Self::parse(name.split('.').next().unwrap_or(""))
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Named tensors grouped by component tag, plus the set of frozen tags.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor>,
    frozen: BTreeSet<Component>,
}

/// Gradient per tensor name.
pub type ParamGrads = BTreeMap<String, Vec<f64>>;

/// Names and shapes of every tensor a configuration owns.
pub fn parameter_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.width;
    let c = cfg.classes();
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    let blocks = |prefix: &str, depth: usize, out: &mut Vec<(String, Vec<usize>)>| {
        for i in 0..depth {
            for name in BLOCK_PARAMS {
                out.push((format!("{prefix}.block{i}.{name}"), block_param_shape(name, d)));
            }
        }
    };
    out.push(("speech_encoder.input.w".into(), vec![cfg.feature_dim, d]));
    out.push(("speech_encoder.input.b".into(), vec![d]));
    blocks("speech_encoder", cfg.speech_depth, &mut out);
    out.push(("text_embedder.table.embedding".into(), vec![c, d]));
    blocks("text_embedder", 1, &mut out);
    blocks("shared_encoder", cfg.shared_depth, &mut out);
    out.push(("shared_encoder.final.ln_g".into(), vec![d]));
    out.push(("shared_encoder.final.ln_b".into(), vec![d]));
    match cfg.fusion {
        FusionMode::Maestro => {
            out.push(("duration_predictor.hidden.w".into(), vec![d, d]));
            out.push(("duration_predictor.hidden.b".into(), vec![d]));
            out.push(("duration_predictor.out.w".into(), vec![d, 1]));
            out.push(("duration_predictor.out.b".into(), vec![1]));
            blocks("refiner", cfg.refiner_depth, &mut out);
            out.push(("task_decoder.joint.label_embedding".into(), vec![c, d]));
            out.push(("task_decoder.joint.enc_w".into(), vec![d, d]));
            out.push(("task_decoder.joint.enc_b".into(), vec![d]));
            out.push(("task_decoder.joint.pred_w".into(), vec![d, d]));
            out.push(("task_decoder.joint.out_w".into(), vec![d, c]));
            out.push(("task_decoder.joint.out_b".into(), vec![c]));
        }
        FusionMode::SlamConcat => {
            out.push(("text_embedder.fusion.speech_type".into(), vec![d]));
            out.push(("text_embedder.fusion.text_type".into(), vec![d]));
            out.push(("task_decoder.ctc.w".into(), vec![d, c]));
            out.push(("task_decoder.ctc.b".into(), vec![c]));
        }
    }
    out
}

impl ModelParams {
    /// Fresh parameters drawn from `cfg.seed`.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from_seed(cfg.seed);
        let mut tensors = BTreeMap::new();
        let layout = parameter_layout(cfg);
        let mut i = 0;
        while i < layout.len() {
            let (name, shape) = &layout[i];
            if let Some(prefix) = name.strip_suffix(".ln1_g") {
                for (pname, t) in init_block(cfg.width, &mut rng) {
                    tensors.insert(format!("{prefix}.{pname}"), t);
                }
                i += BLOCK_PARAMS.len();
                continue;
            }
            let leaf = name.rsplit('.').next().unwrap_or("");
            let t = match leaf {
                "ln_g" => Tensor::filled(shape, 1.0),
                "embedding" | "label_embedding" | "speech_type" | "text_type" => uniform_fan_in(&mut rng, shape, 1),
                // Zero output map: a fresh predictor emits exp(0) = 1 frame per token.
                _ if name == "duration_predictor.out.w" => Tensor::zeros(shape),
                "b" | "ln_b" | "enc_b" | "out_b" => Tensor::zeros(shape),
                _ => uniform_fan_in(&mut rng, shape, shape[0]),
            };
            tensors.insert(name.clone(), t);
            i += 1;
        }
        Ok(Self {
            config: cfg.clone(),
            tensors,
            frozen: BTreeSet::new(),
        })
    }

    /// Assembles parameters from loaded tensors, checking names and shapes.
    pub fn from_tensors(cfg: ModelConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        cfg.validate()?;
        let layout = parameter_layout(&cfg);
        if layout.len() != tensors.len() {
            return Err(Error::Incompatible(format!(
                "expected {} tensors for this config, found {}",
                layout.len(),
                tensors.len()
            )));
        }
        for (name, shape) in &layout {
            match tensors.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Incompatible(format!(
                        "tensor {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Incompatible(format!("missing tensor {name}"))),
            }
        }
        Ok(Self {
            config: cfg,
            tensors,
            frozen: BTreeSet::new(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Tensor names under `tag`, in storage order.
    pub fn names_in(&self, tag: Component) -> Vec<&str> {
        self.tensors
            .keys()
            .filter(|n| Component::of(n).ok() == Some(tag))
            .map(String::as_str)
            .collect()
    }

    pub fn frozen(&self) -> &BTreeSet<Component> {
        &self.frozen
    }

    pub fn is_frozen(&self, tag: Component) -> bool {
        self.frozen.contains(&tag)
    }

    pub fn set_frozen(&mut self, tags: impl IntoIterator<Item = Component>) {
        self.frozen = tags.into_iter().collect();
    }

    /// Overwrites every tensor under `tag` with the donor's copy.
    pub(crate) fn copy_tag_from(&mut self, donor: &ModelParams, tag: Component) {
        for (name, t) in &donor.tensors {
            if Component::of(name).ok() == Some(tag) {
                self.tensors.insert(name.clone(), t.clone());
            }
        }
    }
}

/// A forward pass in progress: a tape plus lazily bound parameter leaves.
pub struct Session<'p> {
    params: &'p ModelParams,
    pub graph: Graph,
    bound: HashMap<&'p str, Var>,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Self {
            params,
            graph: Graph::new(),
            bound: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ModelParams {
        self.params
    }

    pub fn config(&self) -> &'p ModelConfig {
        &self.params.config
    }

    /// Leaf holding the named parameter, created on first use.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let (key, t) = self
            .params
            .tensors
            .get_key_value(name)
            .ok_or_else(|| Error::Incompatible(format!("model has no tensor {name}")))?;
        if let Some(&v) = self.bound.get(key.as_str()) {
            return Ok(v);
        }
        let v = self.graph.leaf(t.clone());
        self.bound.insert(key.as_str(), v);
        Ok(v)
    }

    pub fn block(&mut self, prefix: &str) -> Result<BlockVars> {
        let vars = BLOCK_PARAMS
            .iter()
            .map(|name| self.param(&format!("{prefix}.{name}")))
            .collect::<Result<Vec<Var>>>()?;
        Ok(BlockVars(vars.try_into().expect("one var per block parameter")))
    }

    /// Reverse pass; returns gradients of every parameter that was used.
    pub fn gradients(&self, loss: Var) -> ParamGrads {
        let mut grads = self.graph.backward(loss);
        self.bound
            .iter()
            .filter_map(|(name, &v)| grads.take(v).map(|g| (name.to_string(), g)))
            .collect()
    }
}
