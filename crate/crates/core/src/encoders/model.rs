use super::params::{FusionMode, Session};
use crate::error::{dim_err, Error, Result};
use crate::losses::{consistency_mse_node, contrastive_match_loss_node, ctc_loss_node, duration_loss_node, transducer_loss_node};
use crate::numerics::{encoder_block, Tensor, Var};
use crate::synthcorpus::Utterance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Speech,
    Text,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Speech => "speech",
            Modality::Text => "text",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "speech" => Ok(Modality::Speech),
            "text" => Ok(Modality::Text),
            other => Err(Error::Config(format!("unknown modality `{other}` (speech, text)"))),
        }
    }
}

/// Layer whose activations are exposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tap {
    Modal,
    Shared,
}

impl Tap {
    pub fn name(self) -> &'static str {
        match self {
            Tap::Modal => "modal",
            Tap::Shared => "shared",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "modal" => Ok(Tap::Modal),
            "shared" => Ok(Tap::Shared),
            other => Err(Error::Config(format!("unknown tap `{other}` (modal, shared)"))),
        }
    }
}

/// Activations `T×D` on the session tape, tagged with origin and layer.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    pub activations: Var,
    pub modality: Modality,
    pub tap: Tap,
}

/// Relative weights of the training objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub task: f64,
    pub consistency: f64,
    pub duration: f64,
    pub contrastive: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            task: 1.0,
            consistency: 1.0,
            duration: 0.1,
            contrastive: 1.0,
        }
    }
}

/// Options of the paired forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub weights: LossWeights,
    /// Block consistency gradients into the speech branch.
    pub speech_is_target: bool,
    /// Where text and speech activations are compared.
    pub consistency_tap: Tap,
    pub temperature: f64,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            speech_is_target: true,
            consistency_tap: Tap::Modal,
            temperature: 0.1,
        }
    }
}

/// Batch-mean loss components and the weighted total on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LossBundle {
    pub total: Var,
    pub task_loss_speech: f64,
    pub task_loss_text: f64,
    pub consistency: f64,
    pub duration: f64,
    pub contrastive: f64,
}

/// Sinusoidal position table `rows×width`.
pub fn sinusoidal_positions(rows: usize, width: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * width);
    for t in 0..rows {
        for j in 0..width {
            let i = (j / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * i / width as f64);
            data.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::matrix(rows, width, data).expect("positive shape")
}

fn add_positions(s: &mut Session<'_>, x: Var) -> Result<Var> {
    let (rows, cols) = (s.graph.value(x).rows(), s.graph.value(x).cols());
    let pe = s.graph.leaf(sinusoidal_positions(rows, cols));
    s.graph.add(x, pe)
}

fn run_blocks(s: &mut Session<'_>, mut x: Var, prefix: &str, depth: usize) -> Result<Var> {
    for i in 0..depth {
        let b = s.block(&format!("{prefix}.block{i}"))?;
        x = encoder_block(&mut s.graph, x, &b)?;
    }
    Ok(x)
}

/// Input projection, positions, then the speech blocks. Length is preserved.
pub fn encode_speech(s: &mut Session<'_>, frames: &Tensor) -> Result<EncoderOutput> {
    let cfg = s.config();
    if frames.shape().len() != 2 || frames.cols() != cfg.feature_dim {
        return Err(dim_err("encode_speech", frames.shape(), &[cfg.feature_dim]));
    }
    let x = s.graph.leaf(frames.clone());
    let w = s.param("speech_encoder.input.w")?;
    let b = s.param("speech_encoder.input.b")?;
    let h = s.graph.linear(x, w, b)?;
    let h = add_positions(s, h)?;
    let out = run_blocks(s, h, "speech_encoder", cfg.speech_depth)?;
    Ok(EncoderOutput {
        activations: out,
        modality: Modality::Speech,
        tap: Tap::Modal,
    })
}

/// Embedding lookup, token positions and one block: `U×D`.
pub fn embed_text(s: &mut Session<'_>, tokens: &[usize]) -> Result<Var> {
    let vocab = s.config().vocab;
    if tokens.is_empty() {
        return Err(Error::Input("cannot embed an empty token sequence".into()));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t == 0 || t > vocab) {
        return Err(Error::Vocabulary { id: bad, vocab });
    }
    let table = s.param("text_embedder.table.embedding")?;
    let e = s.graph.gather_rows(table, tokens)?;
    let e = add_positions(s, e)?;
    run_blocks(s, e, "text_embedder", 1)
}

/// Positive per-token durations `U×1` (projection, GELU, projection, exp).
pub fn predict_durations(s: &mut Session<'_>, token_embeddings: Var) -> Result<Var> {
    let w1 = s.param("duration_predictor.hidden.w")?;
    let b1 = s.param("duration_predictor.hidden.b")?;
    let w2 = s.param("duration_predictor.out.w")?;
    let b2 = s.param("duration_predictor.out.b")?;
    let h = s.graph.linear(token_embeddings, w1, b1)?;
    let h = s.graph.gelu(h);
    let z = s.graph.linear(h, w2, b2)?;
    Ok(s.graph.exp(z))
}

/// Frame counts used by the resampler: round half up, at least one.
pub fn duration_counts(durations: &[f64]) -> Vec<usize> {
    durations
        .iter()
        .map(|&d| {
            let r = (d + 0.5).floor();
            if r.is_finite() && r >= 1.0 {
                r as usize
            } else {
                1
            }
        })
        .collect()
}

/// Repeats row `i` of `token_embeddings` `duration_counts(durations)[i]` times.
pub fn resample(s: &mut Session<'_>, token_embeddings: Var, durations: &[f64]) -> Result<Var> {
    let rows = s.graph.value(token_embeddings).rows();
    if durations.len() != rows || rows == 0 {
        return Err(dim_err("resample", s.graph.value(token_embeddings).shape(), &[durations.len()]));
    }
    let idx: Vec<usize> = duration_counts(durations)
        .into_iter()
        .enumerate()
        .flat_map(|(i, c)| std::iter::repeat_n(i, c))
        .collect();
    s.graph.gather_rows(token_embeddings, &idx)
}

/// Frame positions then the refiner blocks.
pub fn refine(s: &mut Session<'_>, upsampled: Var) -> Result<EncoderOutput> {
    let cfg = s.config();
    let x = s.graph.value(upsampled);
    if x.shape().len() != 2 || x.cols() != cfg.width {
        return Err(dim_err("refine", x.shape(), &[cfg.width]));
    }
    let h = add_positions(s, upsampled)?;
    let out = run_blocks(s, h, "refiner", cfg.refiner_depth)?;
    Ok(EncoderOutput {
        activations: out,
        modality: Modality::Text,
        tap: Tap::Modal,
    })
}

fn shared_stack(s: &mut Session<'_>, x: Var) -> Result<Var> {
    let cfg = s.config();
    let h = run_blocks(s, x, "shared_encoder", cfg.shared_depth)?;
    let g = s.param("shared_encoder.final.ln_g")?;
    let b = s.param("shared_encoder.final.ln_b")?;
    s.graph.layer_norm(h, g, b)
}

/// Shared blocks and final normalization over a modal output.
pub fn encode_shared(s: &mut Session<'_>, modal: EncoderOutput) -> Result<EncoderOutput> {
    if modal.tap != Tap::Modal {
        return Err(Error::State("shared encoder input is already a shared-encoder output".into()));
    }
    let width = s.config().width;
    if s.graph.value(modal.activations).cols() != width {
        return Err(dim_err("encode_shared", s.graph.value(modal.activations).shape(), &[width]));
    }
    let out = shared_stack(s, modal.activations)?;
    Ok(EncoderOutput {
        activations: out,
        modality: modal.modality,
        tap: Tap::Shared,
    })
}

/// Speech rows then text rows, each offset by its modality-type embedding.
pub fn fuse_slam(s: &mut Session<'_>, speech_modal: Var, text_modal: Var) -> Result<Var> {
    let (ts, tt) = (s.graph.value(speech_modal), s.graph.value(text_modal));
    if ts.cols() != tt.cols() {
        return Err(dim_err("fuse_slam", ts.shape(), tt.shape()));
    }
    if tt.rows() == 0 {
        return Err(Error::Input("SLAM fusion needs a non-empty text segment".into()));
    }
    let st = s.param("text_embedder.fusion.speech_type")?;
    let tt_emb = s.param("text_embedder.fusion.text_type")?;
    let a = s.graph.add_row(speech_modal, st)?;
    let b = s.graph.add_row(text_modal, tt_emb)?;
    s.graph.concat_rows(&[a, b])
}

/// Shared-encoder pass over a fused sequence (`slam_concat`).
pub fn encode_fused(s: &mut Session<'_>, fused: Var) -> Result<Var> {
    shared_stack(s, fused)
}

/// Joint-network logits for every lattice node: `(T·(U+1))×(V+1)`.
pub fn joint_logits(s: &mut Session<'_>, encoded: Var, tokens: &[usize]) -> Result<Var> {
    let emb = s.param("task_decoder.joint.label_embedding")?;
    let enc_w = s.param("task_decoder.joint.enc_w")?;
    let enc_b = s.param("task_decoder.joint.enc_b")?;
    let pred_w = s.param("task_decoder.joint.pred_w")?;
    let out_w = s.param("task_decoder.joint.out_w")?;
    let out_b = s.param("task_decoder.joint.out_b")?;
    let history: Vec<usize> = std::iter::once(0).chain(tokens.iter().copied()).collect();
    let e = s.graph.linear(encoded, enc_w, enc_b)?;
    let p = s.graph.gather_rows(emb, &history)?;
    let p = s.graph.matmul(p, pred_w)?;
    let h = s.graph.pair_add(e, p)?;
    let h = s.graph.tanh(h);
    s.graph.linear(h, out_w, out_b)
}

/// Per-frame CTC logits of the `slam_concat` head.
pub fn ctc_logits(s: &mut Session<'_>, encoded: Var) -> Result<Var> {
    let w = s.param("task_decoder.ctc.w")?;
    let b = s.param("task_decoder.ctc.b")?;
    s.graph.linear(encoded, w, b)
}

fn transducer_on(s: &mut Session<'_>, shared: Var, tokens: &[usize]) -> Result<Var> {
    let frames = s.graph.value(shared).rows();
    let logits = joint_logits(s, shared, tokens)?;
    transducer_loss_node(&mut s.graph, logits, frames, tokens)
}

fn mean_of(s: &mut Session<'_>, terms: &[Var]) -> Result<Option<(Var, f64)>> {
    if terms.is_empty() {
        return Ok(None);
    }
    let w = 1.0 / terms.len() as f64;
    let v = s.graph.weighted_sum(&terms.iter().map(|&t| (t, w)).collect::<Vec<_>>())?;
    let value = s.graph.scalar(v);
    Ok(Some((v, value)))
}

/// Paired-data losses over a batch. Batch means of each component are
/// combined with `opts.weights` into `total`.
pub fn forward_paired(s: &mut Session<'_>, batch: &[&Utterance], opts: &ForwardOptions) -> Result<LossBundle> {
    if batch.is_empty() {
        return Err(Error::Input("empty paired batch".into()));
    }
    for u in batch {
        let sum: usize = u.durations.iter().sum();
        if sum != u.num_frames() {
            return Err(Error::Alignment {
                sum,
                frames: u.num_frames(),
            });
        }
    }
    match s.config().fusion {
        FusionMode::Maestro => forward_paired_maestro(s, batch, opts),
        FusionMode::SlamConcat => forward_paired_slam(s, batch, opts),
    }
}

fn forward_paired_maestro(s: &mut Session<'_>, batch: &[&Utterance], opts: &ForwardOptions) -> Result<LossBundle> {
    let (mut ts, mut tt, mut cons, mut dur) = (vec![], vec![], vec![], vec![]);
    for u in batch {
        let speech = encode_speech(s, &u.frames)?;
        let speech_shared = encode_shared(s, speech)?;
        ts.push(transducer_on(s, speech_shared.activations, &u.tokens)?);

        let emb = embed_text(s, &u.tokens)?;
        let predicted = predict_durations(s, emb)?;
        dur.push(duration_loss_node(&mut s.graph, predicted, &u.durations)?);
        let gold: Vec<f64> = u.durations.iter().map(|&d| d as f64).collect();
        let up = resample(s, emb, &gold)?;
        let text = refine(s, up)?;
        let text_shared = encode_shared(s, text)?;
        tt.push(transducer_on(s, text_shared.activations, &u.tokens)?);

        let (a, b) = match opts.consistency_tap {
            Tap::Modal => (text.activations, speech.activations),
            Tap::Shared => (text_shared.activations, speech_shared.activations),
        };
        let mask = vec![true; u.num_frames()];
        cons.push(consistency_mse_node(&mut s.graph, a, b, &mask, opts.speech_is_target)?);
    }
    let (ts, ts_v) = mean_of(s, &ts)?.expect("non-empty batch");
    let (tt, tt_v) = mean_of(s, &tt)?.expect("non-empty batch");
    let (cons, cons_v) = mean_of(s, &cons)?.expect("non-empty batch");
    let (dur, dur_v) = mean_of(s, &dur)?.expect("non-empty batch");
    let w = opts.weights;
    let total = s
        .graph
        .weighted_sum(&[(ts, w.task), (tt, w.task), (cons, w.consistency), (dur, w.duration)])?;
    Ok(LossBundle {
        total,
        task_loss_speech: ts_v,
        task_loss_text: tt_v,
        consistency: cons_v,
        duration: dur_v,
        contrastive: 0.0,
    })
}

/// Shared-encoder output of the fused pass split back into its speech and text segments.
pub fn slam_segments(s: &mut Session<'_>, u: &Utterance) -> Result<(Var, Var)> {
    let speech = encode_speech(s, &u.frames)?;
    let text = embed_text(s, &u.tokens)?;
    let fused = fuse_slam(s, speech.activations, text)?;
    let shared = encode_fused(s, fused)?;
    let frames = u.num_frames();
    let sp = s.graph.slice_rows(shared, 0, frames)?;
    let tx = s.graph.slice_rows(shared, frames, u.tokens.len())?;
    Ok((sp, tx))
}

fn forward_paired_slam(s: &mut Session<'_>, batch: &[&Utterance], opts: &ForwardOptions) -> Result<LossBundle> {
    let mut ctc = Vec::with_capacity(batch.len());
    let mut pooled_s = Vec::with_capacity(batch.len());
    let mut pooled_t = Vec::with_capacity(batch.len());
    for u in batch {
        let (sp, tx) = slam_segments(s, u)?;
        let logits = ctc_logits(s, sp)?;
        ctc.push(ctc_loss_node(&mut s.graph, logits, &u.tokens)?);
        pooled_s.push(s.graph.mean_rows(sp));
        pooled_t.push(s.graph.mean_rows(tx));
    }
    let (ctc, ctc_v) = mean_of(s, &ctc)?.expect("non-empty batch");
    let ps = s.graph.concat_rows(&pooled_s)?;
    let pt = s.graph.concat_rows(&pooled_t)?;
    let con = contrastive_match_loss_node(&mut s.graph, ps, pt, opts.temperature)?;
    let con_v = s.graph.scalar(con);
    let w = opts.weights;
    let total = s.graph.weighted_sum(&[(ctc, w.task), (con, w.contrastive)])?;
    Ok(LossBundle {
        total,
        task_loss_speech: ctc_v,
        task_loss_text: 0.0,
        consistency: 0.0,
        duration: 0.0,
        contrastive: con_v,
    })
}

/// Text path with predicted durations; returns the refined (modal) output
/// and the frame counts used.
pub fn synthesize_text(s: &mut Session<'_>, tokens: &[usize]) -> Result<(EncoderOutput, Vec<usize>)> {
    let emb = embed_text(s, tokens)?;
    let predicted = predict_durations(s, emb)?;
    let durations = s.graph.value(predicted).data().to_vec();
    let up = resample(s, emb, &durations)?;
    Ok((refine(s, up)?, duration_counts(&durations)))
}

/// Text-only transducer loss averaged over `texts` (Maestro only).
pub fn forward_text_only(s: &mut Session<'_>, texts: &[&[usize]]) -> Result<LossBundle> {
    if s.config().fusion != FusionMode::Maestro {
        return Err(Error::Unsupported("text-only injection requires the maestro fusion mode".into()));
    }
    if texts.is_empty() {
        return Err(Error::Input("empty text batch".into()));
    }
    let mut terms = Vec::with_capacity(texts.len());
    for tokens in texts {
        let (text, _) = synthesize_text(s, tokens)?;
        let shared = encode_shared(s, text)?;
        terms.push(transducer_on(s, shared.activations, tokens)?);
    }
    let (total, v) = mean_of(s, &terms)?.expect("non-empty batch");
    Ok(LossBundle {
        total,
        task_loss_speech: 0.0,
        task_loss_text: v,
        consistency: 0.0,
        duration: 0.0,
        contrastive: 0.0,
    })
}
