//! Training objectives. Each loss exists as a plain function on tensors and
//! as a graph node so that it can be composed into model forward passes.

mod ctc;
mod transducer;

pub use ctc::{ctc_loss, ctc_loss_node, ctc_loss_with_grad, ctc_min_frames, ctc_nll_logprob_grad};
pub use transducer::{
    transducer_lattice, transducer_loss, transducer_loss_node, transducer_loss_with_grad,
    transducer_nll_logprob_grad, AlignmentLattice,
};

use crate::error::{dim_err, Error, Result};
use crate::numerics::{Graph, Tensor, Var};

fn mse_parts(text: &Tensor, speech: &Tensor, mask: &[bool]) -> Result<(f64, Vec<f64>)> {
    if text.shape() != speech.shape() {
        return Err(dim_err("consistency_mse", text.shape(), speech.shape()));
    }
    let rows = text.rows();
    if mask.len() != rows {
        return Err(dim_err("consistency_mse mask", text.shape(), &[mask.len()]));
    }
    let active = mask.iter().filter(|&&m| m).count();
    if active == 0 {
        return Err(Error::UndefinedMean("consistency mask selects no frames"));
    }
    let cols = text.cols();
    let n = (active * cols) as f64;
    let mut sum = 0.0;
    let mut grad = vec![0.0; text.len()];
    for (r, &on) in mask.iter().enumerate() {
        if !on {
            continue;
        }
        let span = r * cols..(r + 1) * cols;
        for ((g, &t), &s) in grad[span.clone()].iter_mut().zip(&text.data()[span.clone()]).zip(&speech.data()[span]) {
            let d = t - s;
            sum += d * d;
            *g = 2.0 * d / n;
        }
    }
    Ok((sum / n, grad))
}

/// Mean squared difference over masked frames and all channels.
pub fn consistency_mse(text: &Tensor, speech: &Tensor, mask: &[bool]) -> Result<f64> {
    mse_parts(text, speech, mask).map(|(v, _)| v)
}

/// Graph form of [`consistency_mse`]. With `speech_is_target` the speech side
/// receives no gradient.
pub fn consistency_mse_node(g: &mut Graph, text: Var, speech: Var, mask: &[bool], speech_is_target: bool) -> Result<Var> {
    let (v, grad) = mse_parts(g.value(text), g.value(speech), mask)?;
    let mut inputs = Vec::with_capacity(2);
    if !speech_is_target {
        inputs.push((speech, grad.iter().map(|x| -x).collect()));
    }
    inputs.push((text, grad));
    Ok(g.fused_scalar(v, inputs))
}

fn duration_parts(predicted: &[f64], gold: &[usize]) -> Result<(f64, Vec<f64>)> {
    if predicted.len() != gold.len() || gold.is_empty() {
        return Err(dim_err("duration_loss", &[predicted.len()], &[gold.len()]));
    }
    if let Some(p) = predicted.iter().find(|&&p| !(p > 0.0) || !p.is_finite()) {
        return Err(Error::Domain(format!("predicted duration {p} is not a positive finite number")));
    }
    if gold.contains(&0) {
        return Err(Error::Domain("gold durations must be at least one frame".into()));
    }
    let n = gold.len() as f64;
    let mut sum = 0.0;
    let grad = predicted
        .iter()
        .zip(gold)
        .map(|(&p, &d)| {
            let diff = p.ln() - (d as f64).ln();
            sum += diff * diff;
            2.0 * diff / (n * p)
        })
        .collect();
    Ok((sum / n, grad))
}

/// Mean squared error between log predicted and log gold durations.
pub fn duration_loss(predicted: &[f64], gold: &[usize]) -> Result<f64> {
    duration_parts(predicted, gold).map(|(v, _)| v)
}

pub fn duration_loss_node(g: &mut Graph, predicted: Var, gold: &[usize]) -> Result<Var> {
    let (v, grad) = duration_parts(g.value(predicted).data(), gold)?;
    Ok(g.fused_scalar(v, vec![(predicted, grad)]))
}

/// Symmetric InfoNCE over cosine logits scaled by `1/temperature`; row `i`
/// of `speech` and `text` is the positive pair.
pub fn contrastive_match_loss_node(g: &mut Graph, speech: Var, text: Var, temperature: f64) -> Result<Var> {
    let (ts, tt) = (g.value(speech), g.value(text));
    if ts.shape() != tt.shape() || ts.shape().len() != 2 {
        return Err(dim_err("contrastive_match_loss", ts.shape(), tt.shape()));
    }
    let n = ts.rows();
    if n < 2 {
        return Err(Error::Input("contrastive loss needs at least two pairs".into()));
    }
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let s = g.l2_normalize_rows(speech)?;
    let t = g.l2_normalize_rows(text)?;
    let diag = g.leaf(Tensor::identity(n));
    let mut directions = Vec::with_capacity(2);
    for (a, b) in [(s, t), (t, s)] {
        let logits = g.matmul_nt(a, b)?;
        let logits = g.scale(logits, 1.0 / temperature);
        let lp = g.log_softmax(logits);
        let picked = g.mul(lp, diag)?;
        let total = g.sum_all(picked);
        directions.push((total, -0.5 / n as f64));
    }
    g.weighted_sum(&directions)
}

/// Value of [`contrastive_match_loss_node`] for plain matrices.
pub fn contrastive_match_loss(speech: &Tensor, text: &Tensor, temperature: f64) -> Result<f64> {
    let mut g = Graph::new();
    let s = g.leaf(speech.clone());
    let t = g.leaf(text.clone());
    let l = contrastive_match_loss_node(&mut g, s, t, temperature)?;
    Ok(g.scalar(l))
}

#[cfg(test)]
mod tests;
