use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{rng_stream, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_steps: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_steps: 250,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    /// `N×2` coordinates.
    pub coords: Tensor,
    /// KL(P‖Q) against the unexaggerated affinities, one entry per iteration.
    pub kl_trace: Vec<f64>,
    /// Points nudged apart because they duplicated an earlier point.
    pub jittered: usize,
    /// Largest entropy miss of the bandwidth search, in nats.
    pub max_entropy_error: f64,
}

impl TsneResult {
    pub fn initial_kl(&self) -> f64 {
        self.kl_trace[0]
    }

    /// KL at the first iteration without exaggeration, if reached.
    pub fn post_exaggeration_kl(&self, cfg: &TsneConfig) -> Option<f64> {
        self.kl_trace.get(cfg.exaggeration_steps).copied()
    }

    pub fn final_kl(&self) -> f64 {
        *self.kl_trace.last().expect("at least one iteration")
    }
}

const ENTROPY_TOL: f64 = 1e-5;
const MAX_BISECTIONS: usize = 50;
const MIN_GAIN: f64 = 0.01;
const MOMENTUM_SWITCH: usize = 250;

fn squared_distances(x: &Tensor) -> Vec<f64> {
    let n = x.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = s;
            d[j * n + i] = s;
        }
    }
    d
}

/// Conditional affinities `P(j|i)` (rows sum to 1) with per-point precision
/// bisected to entropy `ln(perplexity)`. Returns the row-major matrix and the
/// largest entropy miss.
pub fn conditional_affinities(dist: &[f64], n: usize, perplexity: f64) -> (Vec<f64>, f64) {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let dmin = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &d)| d)
            .fold(f64::INFINITY, f64::min);
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        let mut best = (f64::INFINITY, 1.0);
        for _ in 0..MAX_BISECTIONS {
            // Shift by the nearest distance so the largest weight is exp(0).
            let mut sum = 0.0;
            let mut acc = 0.0;
            for (j, &d) in row.iter().enumerate() {
                if j != i {
                    let w = (-(d - dmin) * beta).exp();
                    sum += w;
                    acc += (d - dmin) * w;
                }
            }
            let h = sum.ln() + beta * acc / sum;
            let err = h - target;
            if err.abs() < best.0 {
                best = (err.abs(), beta);
            }
            if err.abs() < ENTROPY_TOL {
                break;
            }
            if err > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        let beta = best.1;
        worst = worst.max(best.0);
        let out = &mut p[i * n..(i + 1) * n];
        let mut sum = 0.0;
        for (j, &d) in row.iter().enumerate() {
            if j != i {
                out[j] = (-(d - dmin) * beta).exp();
                sum += out[j];
            }
        }
        out.iter_mut().for_each(|v| *v /= sum);
    }
    (p, worst)
}

/// Exact t-SNE of the rows of `x` into two dimensions.
pub fn tsne(x: &Tensor, cfg: &TsneConfig) -> Result<TsneResult> {
    let n = x.rows();
    if x.shape().len() != 2 || x.cols() < 2 {
        return Err(Error::Config("t-SNE input must be N×D with D ≥ 2".into()));
    }
    if !(cfg.perplexity >= 1.0) || (n as f64) < 3.0 * cfg.perplexity {
        return Err(Error::Config(format!(
            "perplexity {} infeasible for {n} points (need N ≥ 3·perplexity, perplexity ≥ 1)",
            cfg.perplexity
        )));
    }
    if cfg.iterations == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Config("iterations and learning rate must be positive".into()));
    }
    if !x.is_finite() {
        return Err(Error::Input("t-SNE input contains non-finite values".into()));
    }
    let mut rng = rng_stream(cfg.seed, 0);
    let mut x = x.clone();
    let mut jittered = 0;
    for i in 1..n {
        if (0..i).any(|j| x.row(j) == x.row(i)) {
            for v in x.row_mut(i) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += 1e-10 * z;
            }
            jittered += 1;
        }
    }

    let dist = squared_distances(&x);
    let (cond, max_entropy_error) = conditional_affinities(&dist, n, cfg.perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }

    let mut y: Vec<f64> = (0..2 * n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            1e-4 * z
        })
        .collect();
    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; 2 * n];
    let mut kl_trace = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        let mut zsum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                zsum += 2.0 * q;
            }
        }
        let exag = if it < cfg.exaggeration_steps { cfg.exaggeration } else { 1.0 };
        let mut kl = 0.0;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let pij = p[i * n + j];
                let qij = (num[i * n + j] / zsum).max(1e-12);
                kl += pij * (pij / qij).ln();
                let m = (exag * pij - qij) * num[i * n + j];
                grad[2 * i] += 4.0 * m * (y[2 * i] - y[2 * j]);
                grad[2 * i + 1] += 4.0 * m * (y[2 * i + 1] - y[2 * j + 1]);
            }
        }
        if !kl.is_finite() {
            return Err(Error::Evaluation(format!("t-SNE KL became non-finite at iteration {it}")));
        }
        kl_trace.push(kl);
        let momentum = if it < MOMENTUM_SWITCH { 0.5 } else { 0.8 };
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(MIN_GAIN)
            };
            update[k] = momentum * update[k] - cfg.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        for c in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + c]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[2 * i + c] -= mean);
        }
    }
    Ok(TsneResult {
        coords: Tensor::matrix(n, 2, y)?,
        kl_trace,
        jittered,
        max_entropy_error,
    })
}

/// Mean distance between paired points (`i` and `i + n`) divided by the mean
/// distance over all unpaired speech/text combinations.
pub fn paired_distance_ratio(coords: &Tensor, n: usize) -> Result<f64> {
    if coords.rows() != 2 * n || n < 2 {
        return Err(Error::Input(format!("expected {} rows of paired coordinates", 2 * n)));
    }
    let d = |a: usize, b: usize| {
        let (p, q) = (coords.row(a), coords.row(b));
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    };
    let paired = (0..n).map(|i| d(i, n + i)).sum::<f64>() / n as f64;
    let mut other = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                other += d(i, n + j);
            }
        }
    }
    Ok(paired / (other / (n * (n - 1)) as f64))
}
