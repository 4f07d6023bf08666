//! Connectionist temporal classification over blank-interleaved targets.

use crate::error::{dim_err, Error, Result};
use crate::numerics::{log_add_exp, log_softmax_rows, Graph, Tensor, Var};

/// Minimum frame count needed to emit `target` (one per label plus a blank
/// between each adjacent repeat).
pub fn ctc_min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Loss and gradient with respect to per-frame log-probabilities `[T][V+1]`.
pub fn ctc_nll_logprob_grad(log_probs: &[f64], classes: usize, target: &[usize]) -> Result<(f64, Vec<f64>)> {
    let frames = log_probs.len() / classes;
    if frames == 0 || log_probs.len() != frames * classes {
        return Err(dim_err("ctc_loss", &[frames, classes], &[log_probs.len()]));
    }
    if let Some(&bad) = target.iter().find(|&&y| y == 0 || y >= classes) {
        return Err(Error::Vocabulary {
            id: bad,
            vocab: classes - 1,
        });
    }
    let needed = ctc_min_frames(target);
    if needed > frames {
        return Err(Error::ImpossibleTarget(format!(
            "CTC target needs {needed} frames, emission has {frames}"
        )));
    }

    let ext: Vec<usize> = std::iter::once(0)
        .chain(target.iter().flat_map(|&y| [y, 0]))
        .collect();
    let s_len = ext.len();
    let lp = |t: usize, s: usize| log_probs[t * classes + ext[s]];
    let skip_ok = |s: usize| s >= 2 && ext[s] != 0 && ext[s] != ext[s - 2];

    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; frames * s_len];
    alpha[0] = lp(0, 0);
    if s_len > 1 {
        alpha[1] = lp(0, 1);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let prev = (t - 1) * s_len;
            let mut a = alpha[prev + s];
            if s >= 1 {
                a = log_add_exp(a, alpha[prev + s - 1]);
            }
            if skip_ok(s) {
                a = log_add_exp(a, alpha[prev + s - 2]);
            }
            alpha[t * s_len + s] = a + lp(t, s);
        }
    }
    let last = (frames - 1) * s_len;
    let mut ll = alpha[last + s_len - 1];
    if s_len > 1 {
        ll = log_add_exp(ll, alpha[last + s_len - 2]);
    }

    let mut beta = vec![ninf; frames * s_len];
    beta[last + s_len - 1] = lp(frames - 1, s_len - 1);
    if s_len > 1 {
        beta[last + s_len - 2] = lp(frames - 1, s_len - 2);
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let next = (t + 1) * s_len;
            let mut b = beta[next + s];
            if s + 1 < s_len {
                b = log_add_exp(b, beta[next + s + 1]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                b = log_add_exp(b, beta[next + s + 2]);
            }
            beta[t * s_len + s] = b + lp(t, s);
        }
    }

    if !ll.is_finite() {
        return Err(Error::ImpossibleTarget(format!("CTC log-likelihood is {ll}")));
    }
    let mut grad = vec![0.0; log_probs.len()];
    for t in 0..frames {
        for s in 0..s_len {
            let i = t * s_len + s;
            let occ = alpha[i] + beta[i] - lp(t, s) - ll;
            grad[t * classes + ext[s]] -= occ.exp();
        }
    }
    Ok((-ll, grad))
}

fn logits_to_grad(logits: &[f64], classes: usize, target: &[usize]) -> Result<(f64, Vec<f64>)> {
    let lp = log_softmax_rows(logits, classes);
    let (nll, dlp) = ctc_nll_logprob_grad(&lp, classes, target)?;
    let mut grad = Vec::with_capacity(dlp.len());
    for (grow, lrow) in dlp.chunks(classes).zip(lp.chunks(classes)) {
        let s: f64 = grow.iter().sum();
        grad.extend(grow.iter().zip(lrow).map(|(d, l)| d - l.exp() * s));
    }
    Ok((nll, grad))
}

/// CTC loss and gradient with respect to raw logits `[T][V+1]`, blank = 0.
pub fn ctc_loss_with_grad(logits: &Tensor, target: &[usize]) -> Result<(f64, Vec<f64>)> {
    if logits.shape().len() != 2 {
        return Err(dim_err("ctc_loss", logits.shape(), &[2]));
    }
    logits_to_grad(logits.data(), logits.cols(), target)
}

pub fn ctc_loss(logits: &Tensor, target: &[usize]) -> Result<f64> {
    ctc_loss_with_grad(logits, target).map(|(l, _)| l)
}

pub fn ctc_loss_node(g: &mut Graph, logits: Var, target: &[usize]) -> Result<Var> {
    let t = g.value(logits);
    let (nll, grad) = logits_to_grad(t.data(), t.cols(), target)?;
    Ok(g.fused_scalar(nll, vec![(logits, grad)]))
}
