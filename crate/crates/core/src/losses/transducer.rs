//! Transducer (RNN-T) loss by forward/backward dynamic programming in log space.

use crate::error::{dim_err, Error, Result};
use crate::numerics::{log_add_exp, log_softmax_rows, Graph, Tensor, Var};

/// Forward and backward tables over lattice nodes `(t, u)`, `t` in `0..T`,
/// `u` in `0..=U`, together with the blank and next-label emission
/// log-probabilities at each node.
#[derive(Debug, Clone)]
pub struct AlignmentLattice {
    pub frames: usize,
    pub labels: usize,
    pub log_alpha: Vec<f64>,
    pub log_beta: Vec<f64>,
    pub blank: Vec<f64>,
    /// `log p(y_{u+1} | t, u)`; `-inf` on the last column where no label remains.
    pub emit: Vec<f64>,
    pub log_likelihood: f64,
}

impl AlignmentLattice {
    #[inline]
    pub fn at(&self, t: usize, u: usize) -> usize {
        t * (self.labels + 1) + u
    }

    /// Log-likelihood recovered from the backward table.
    pub fn backward_log_likelihood(&self) -> f64 {
        self.log_beta[0]
    }

    /// Posterior probability that an alignment visits `(t, u)`.
    pub fn occupancy(&self, t: usize, u: usize) -> f64 {
        let i = self.at(t, u);
        (self.log_alpha[i] + self.log_beta[i] - self.log_likelihood).exp()
    }
}

fn check_shapes(log_probs_len: usize, frames: usize, target: &[usize], classes: usize) -> Result<()> {
    let u1 = target.len() + 1;
    if frames == 0 || log_probs_len != frames * u1 * classes {
        return Err(dim_err("transducer_loss", &[frames, u1, classes], &[log_probs_len]));
    }
    if let Some(&bad) = target.iter().find(|&&y| y == 0 || y >= classes) {
        return Err(Error::Vocabulary {
            id: bad,
            vocab: classes - 1,
        });
    }
    Ok(())
}

/// Builds the lattice from per-node log-probabilities laid out `[T][U+1][V+1]`.
pub fn transducer_lattice(log_probs: &[f64], frames: usize, target: &[usize], classes: usize) -> Result<AlignmentLattice> {
    check_shapes(log_probs.len(), frames, target, classes)?;
    let labels = target.len();
    let u1 = labels + 1;
    let n = frames * u1;
    let mut blank = vec![0.0; n];
    let mut emit = vec![f64::NEG_INFINITY; n];
    for t in 0..frames {
        for u in 0..u1 {
            let base = (t * u1 + u) * classes;
            blank[t * u1 + u] = log_probs[base];
            if u < labels {
                emit[t * u1 + u] = log_probs[base + target[u]];
            }
        }
    }

    let mut alpha = vec![f64::NEG_INFINITY; n];
    alpha[0] = 0.0;
    for t in 0..frames {
        for u in 0..u1 {
            let i = t * u1 + u;
            if t == 0 && u == 0 {
                continue;
            }
            let from_t = if t > 0 { alpha[i - u1] + blank[i - u1] } else { f64::NEG_INFINITY };
            let from_u = if u > 0 { alpha[i - 1] + emit[i - 1] } else { f64::NEG_INFINITY };
            alpha[i] = log_add_exp(from_t, from_u);
        }
    }
    let last = n - 1;
    let log_likelihood = alpha[last] + blank[last];

    let mut beta = vec![f64::NEG_INFINITY; n];
    beta[last] = blank[last];
    for t in (0..frames).rev() {
        for u in (0..u1).rev() {
            let i = t * u1 + u;
            if i == last {
                continue;
            }
            let via_blank = if t + 1 < frames { beta[i + u1] + blank[i] } else { f64::NEG_INFINITY };
            let via_label = if u < labels { beta[i + 1] + emit[i] } else { f64::NEG_INFINITY };
            beta[i] = log_add_exp(via_blank, via_label);
        }
    }

    if !log_likelihood.is_finite() {
        return Err(Error::ImpossibleTarget(format!(
            "transducer log-likelihood is {log_likelihood} for T={frames}, U={labels}"
        )));
    }
    Ok(AlignmentLattice {
        frames,
        labels,
        log_alpha: alpha,
        log_beta: beta,
        blank,
        emit,
        log_likelihood,
    })
}

/// Negative log-likelihood and its gradient with respect to the per-node
/// log-probabilities (same layout as the input).
pub fn transducer_nll_logprob_grad(log_probs: &[f64], frames: usize, target: &[usize], classes: usize) -> Result<(f64, Vec<f64>)> {
    let lat = transducer_lattice(log_probs, frames, target, classes)?;
    let u1 = target.len() + 1;
    let ll = lat.log_likelihood;
    let mut grad = vec![0.0; log_probs.len()];
    for t in 0..frames {
        for u in 0..u1 {
            let i = t * u1 + u;
            let base = i * classes;
            let after_blank = if t + 1 < frames {
                lat.log_beta[i + u1]
            } else if u == target.len() {
                0.0
            } else {
                f64::NEG_INFINITY
            };
            grad[base] = -(lat.log_alpha[i] + lat.blank[i] + after_blank - ll).exp();
            if u < target.len() {
                grad[base + target[u]] = -(lat.log_alpha[i] + lat.emit[i] + lat.log_beta[i + 1] - ll).exp();
            }
        }
    }
    Ok((-ll, grad))
}

/// Transducer loss from raw joint-network logits `[T][U+1][V+1]` (blank = 0),
/// returning the loss and its exact gradient with respect to the logits.
pub fn transducer_loss_with_grad(logits: &Tensor, target: &[usize]) -> Result<(f64, Vec<f64>)> {
    let shape = logits.shape();
    if shape.len() != 3 || shape[1] != target.len() + 1 {
        return Err(dim_err("transducer_loss", shape, &[target.len() + 1]));
    }
    let frames = shape[0];
    let classes = shape[2];
    logits_to_grad(logits.data(), frames, target, classes)
}

fn logits_to_grad(logits: &[f64], frames: usize, target: &[usize], classes: usize) -> Result<(f64, Vec<f64>)> {
    let lp = log_softmax_rows(logits, classes);
    let (nll, dlp) = transducer_nll_logprob_grad(&lp, frames, target, classes)?;
    let mut grad = Vec::with_capacity(dlp.len());
    for (grow, lrow) in dlp.chunks(classes).zip(lp.chunks(classes)) {
        let s: f64 = grow.iter().sum();
        grad.extend(grow.iter().zip(lrow).map(|(d, l)| d - l.exp() * s));
    }
    Ok((nll, grad))
}

/// Scalar transducer loss.
pub fn transducer_loss(logits: &Tensor, target: &[usize]) -> Result<f64> {
    transducer_loss_with_grad(logits, target).map(|(l, _)| l)
}

/// Graph node for the transducer loss; `logits` holds `T·(U+1)` rows of `V+1` logits.
pub fn transducer_loss_node(g: &mut Graph, logits: Var, frames: usize, target: &[usize]) -> Result<Var> {
    let t = g.value(logits);
    let classes = t.cols();
    if t.rows() != frames * (target.len() + 1) {
        return Err(dim_err("transducer_loss", t.shape(), &[frames, target.len() + 1, classes]));
    }
    let (nll, grad) = logits_to_grad(t.data(), frames, target, classes)?;
    Ok(g.fused_scalar(nll, vec![(logits, grad)]))
}
