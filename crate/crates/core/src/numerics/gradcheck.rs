use super::graph::{Graph, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// Largest relative disagreement between reverse-mode and central-difference
/// gradients of the scalar built by `f` from leaves holding `params`.
///
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_strided(f, params, h, 1)
}

/// As [`grad_check`] but probes only every `stride`-th coordinate of each tensor.
pub fn grad_check_strided<F>(f: F, params: &[Tensor], h: f64, stride: usize) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.leaf(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.scalar(out);
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("objective is {v}")));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    if !g.scalar(out).is_finite() {
        return Err(Error::Evaluation(format!("objective is {}", g.scalar(out))));
    }
    let grads = g.backward(out);

    let mut worst: f64 = 0.0;
    let mut probe = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let zeros;
        let analytic = match grads.wrt(vars[pi]) {
            Some(a) => a,
            None => {
                zeros = vec![0.0; p.len()];
                &zeros
            }
        };
        for j in (0..p.len()).step_by(stride.max(1)) {
            let orig = p.data()[j];
            probe[pi].data_mut()[j] = orig + h;
            let up = eval(&probe)?;
            probe[pi].data_mut()[j] = orig - h;
            let down = eval(&probe)?;
            probe[pi].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[j];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
