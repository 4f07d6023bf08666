use std::collections::BTreeMap;

use crate::encoders::{
    ctc_logits, encode_fused, encode_shared, encode_speech, embed_text, refine, resample, synthesize_text, FusionMode, ModelParams,
    Session,
};
use crate::error::{dim_err, Error, Result};
use crate::losses::consistency_mse;
use crate::numerics::{matmul, Tensor};
use crate::synthcorpus::Corpus;

/// Maximum labels emitted at one frame before time is forced forward.
pub const MAX_EMISSIONS_PER_FRAME: usize = 5;

/// What to decode: acoustic frames, or tokens pushed through the text path.
#[derive(Debug, Clone, Copy)]
pub enum DecodeInput<'a> {
    Frames(&'a Tensor),
    Tokens(&'a [usize]),
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn add_bias(mut m: Tensor, b: &Tensor) -> Tensor {
    let cols = m.cols();
    for row in m.data_mut().chunks_mut(cols) {
        for (x, &y) in row.iter_mut().zip(b.data()) {
            *x += y;
        }
    }
    m
}

fn tensor<'a>(params: &'a ModelParams, name: &str) -> Result<&'a Tensor> {
    params
        .get(name)
        .ok_or_else(|| Error::Incompatible(format!("model has no tensor {name}")))
}

/// Greedy transducer search over a shared-encoder output `T×D`.
pub fn greedy_transducer(params: &ModelParams, encoded: &Tensor) -> Result<Vec<usize>> {
    let enc = add_bias(
        matmul(encoded, tensor(params, "task_decoder.joint.enc_w")?)?,
        tensor(params, "task_decoder.joint.enc_b")?,
    );
    let pred = matmul(
        tensor(params, "task_decoder.joint.label_embedding")?,
        tensor(params, "task_decoder.joint.pred_w")?,
    )?;
    let out_w = tensor(params, "task_decoder.joint.out_w")?;
    let out_b = tensor(params, "task_decoder.joint.out_b")?;
    let width = enc.cols();
    let mut hyp = Vec::new();
    let mut prev = 0;
    let mut hidden = Tensor::zeros(&[1, width]);
    for t in 0..enc.rows() {
        for _ in 0..MAX_EMISSIONS_PER_FRAME {
            for ((h, &e), &p) in hidden.data_mut().iter_mut().zip(enc.row(t)).zip(pred.row(prev)) {
                *h = (e + p).tanh();
            }
            let logits = add_bias(matmul(&hidden, out_w)?, out_b);
            let k = argmax(logits.data());
            if k == 0 {
                break;
            }
            hyp.push(k);
            prev = k;
        }
    }
    Ok(hyp)
}

/// Best-path CTC decoding: per-frame argmax, merge repeats, drop blanks.
pub fn greedy_ctc(logits: &Tensor) -> Vec<usize> {
    let mut hyp = Vec::new();
    let mut prev = 0;
    for t in 0..logits.rows() {
        let k = argmax(logits.row(t));
        if k != 0 && k != prev {
            hyp.push(k);
        }
        prev = k;
    }
    hyp
}

/// Greedy decoding with the model's task decoder.
///
/// Maestro models use the transducer joint over the shared encoder. SLAM
/// models have no transcript at inference, so speech is passed through the
/// shared encoder alone (speech-type embedding added) and read out by CTC.
pub fn decode_greedy(params: &ModelParams, input: DecodeInput<'_>) -> Result<Vec<usize>> {
    let mut s = Session::new(params);
    match (params.config().fusion, input) {
        (FusionMode::Maestro, DecodeInput::Frames(frames)) => {
            let speech = encode_speech(&mut s, frames)?;
            let shared = encode_shared(&mut s, speech)?;
            greedy_transducer(params, s.graph.value(shared.activations))
        }
        (FusionMode::Maestro, DecodeInput::Tokens(tokens)) => {
            let (text, _) = synthesize_text(&mut s, tokens)?;
            let shared = encode_shared(&mut s, text)?;
            greedy_transducer(params, s.graph.value(shared.activations))
        }
        (FusionMode::SlamConcat, DecodeInput::Frames(frames)) => {
            let speech = encode_speech(&mut s, frames)?;
            let st = s.param("text_embedder.fusion.speech_type")?;
            let x = s.graph.add_row(speech.activations, st)?;
            let shared = encode_fused(&mut s, x)?;
            let logits = ctc_logits(&mut s, shared)?;
            Ok(greedy_ctc(s.graph.value(logits)))
        }
        (FusionMode::SlamConcat, DecodeInput::Tokens(_)) => Err(Error::Unsupported(
            "slam_concat has no standalone text decoding path".into(),
        )),
    }
}

/// Levenshtein distance with unit substitution, insertion and deletion costs.
pub fn edit_distance(hyp: &[usize], reference: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=reference.len()).collect();
    let mut cur = vec![0; reference.len() + 1];
    for (i, h) in hyp.iter().enumerate() {
        cur[0] = i + 1;
        for (j, r) in reference.iter().enumerate() {
            let sub = prev[j] + usize::from(h != r);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[reference.len()]
}

/// Error counts for one domain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorCounts {
    pub errors: usize,
    pub reference_tokens: usize,
    pub utterances: usize,
}

impl ErrorCounts {
    pub fn ter(&self) -> f64 {
        self.errors as f64 / self.reference_tokens as f64
    }
}

/// Token error rate over one or more corpora.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub total: ErrorCounts,
    pub per_domain: BTreeMap<String, ErrorCounts>,
}

impl EvalReport {
    pub fn ter(&self) -> f64 {
        self.total.ter()
    }

    pub fn utterances(&self) -> usize {
        self.total.utterances
    }

    pub fn merge(&mut self, other: &EvalReport) {
        for (domain, c) in &other.per_domain {
            let e = self.per_domain.entry(domain.clone()).or_default();
            e.errors += c.errors;
            e.reference_tokens += c.reference_tokens;
            e.utterances += c.utterances;
        }
        self.total.errors += other.total.errors;
        self.total.reference_tokens += other.total.reference_tokens;
        self.total.utterances += other.total.utterances;
    }

    /// `key = value` lines, totals first then one line per domain.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "ter = {:.6}\nerrors = {}\nreference_tokens = {}\nutterances = {}\n",
            self.ter(),
            self.total.errors,
            self.total.reference_tokens,
            self.total.utterances
        );
        for (d, c) in &self.per_domain {
            out.push_str(&format!("ter.{d} = {:.6}\n", c.ter()));
        }
        out
    }
}

/// Greedy-decodes every utterance and scores it against its transcript.
pub fn evaluate_ter(params: &ModelParams, corpus: &Corpus) -> Result<EvalReport> {
    if corpus.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty corpus".into()));
    }
    let mut counts = ErrorCounts::default();
    for u in &corpus.utterances {
        let hyp = decode_greedy(params, DecodeInput::Frames(&u.frames))?;
        counts.errors += edit_distance(&hyp, &u.tokens);
        counts.reference_tokens += u.tokens.len();
        counts.utterances += 1;
    }
    let mut per_domain = BTreeMap::new();
    per_domain.insert(corpus.spec.id.clone(), counts);
    Ok(EvalReport {
        total: counts,
        per_domain,
    })
}

/// Mean framewise MSE between refined text (gold durations) and speech modal
/// activations over the corpus.
pub fn measure_text_encoder_loss(params: &ModelParams, corpus: &Corpus) -> Result<f64> {
    if params.config().fusion != FusionMode::Maestro {
        return Err(Error::Unsupported("text encoder loss is defined for maestro models".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Input("cannot measure on an empty corpus".into()));
    }
    let mut acc = 0.0;
    for u in &corpus.utterances {
        let mut s = Session::new(params);
        let speech = encode_speech(&mut s, &u.frames)?;
        let emb = embed_text(&mut s, &u.tokens)?;
        let gold: Vec<f64> = u.durations.iter().map(|&d| d as f64).collect();
        let up = resample(&mut s, emb, &gold)?;
        let text = refine(&mut s, up)?;
        let (a, b) = (s.graph.value(text.activations), s.graph.value(speech.activations));
        if a.shape() != b.shape() {
            return Err(dim_err("measure_text_encoder_loss", a.shape(), b.shape()));
        }
        acc += consistency_mse(a, b, &vec![true; u.num_frames()])?;
    }
    Ok(acc / corpus.len() as f64)
}
