use super::graph::{Graph, Var};
use super::init::{uniform_fan_in, LabRng};
use super::Tensor;
use crate::error::{dim_err, Result};

/// Parameter names of one encoder block, in storage order.
pub const BLOCK_PARAMS: [&str; 12] = [
    "ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "ln2_g", "ln2_b", "ff1_w", "ff1_b", "ff2_w", "ff2_b",
];

/// Handles to the twelve tensors of a block, in [`BLOCK_PARAMS`] order.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars(pub [Var; 12]);

pub fn block_param_shape(name: &str, width: usize) -> Vec<usize> {
    let h = 4 * width;
    match name {
        "ln1_g" | "ln1_b" | "ln2_g" | "ln2_b" | "ff2_b" => vec![width],
        "wq" | "wk" | "wv" | "wo" => vec![width, width],
        "ff1_w" => vec![width, h],
        "ff1_b" => vec![h],
        "ff2_w" => vec![h, width],
        other => panic!("unknown block parameter {other}"),
    }
}

/// Fresh block parameters: unit gains, zero shifts and biases, fan-in uniform weights.
pub fn init_block(width: usize, rng: &mut LabRng) -> Vec<(&'static str, Tensor)> {
    BLOCK_PARAMS
        .iter()
        .map(|&name| {
            let shape = block_param_shape(name, width);
            let t = match name {
                "ln1_g" | "ln2_g" => Tensor::filled(&shape, 1.0),
                "ln1_b" | "ln2_b" | "ff1_b" | "ff2_b" => Tensor::zeros(&shape),
                _ => uniform_fan_in(rng, &shape, shape[0]),
            };
            (name, t)
        })
        .collect()
}

/// Pre-norm residual block: single-head full-context self-attention followed
/// by a GELU feed-forward of width `4·D`.
pub fn encoder_block(g: &mut Graph, x: Var, p: &BlockVars) -> Result<Var> {
    let [ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b] = p.0;
    let width = g.value(wq).rows();
    if g.value(x).shape().len() != 2 || g.value(x).cols() != width {
        return Err(dim_err("encoder_block", g.value(x).shape(), &[width]));
    }
    let h = g.layer_norm(x, ln1_g, ln1_b)?;
    let q = g.matmul(h, wq)?;
    let k = g.matmul(h, wk)?;
    let v = g.matmul(h, wv)?;
    let scores = g.matmul_nt(q, k)?;
    let scores = g.scale(scores, 1.0 / (width as f64).sqrt());
    let attn = g.softmax(scores);
    let ctx = g.matmul(attn, v)?;
    let proj = g.matmul(ctx, wo)?;
    let x1 = g.add(x, proj)?;
    let h2 = g.layer_norm(x1, ln2_g, ln2_b)?;
    let f = g.linear(h2, ff1_w, ff1_b)?;
    let f = g.gelu(f);
    let f = g.linear(f, ff2_w, ff2_b)?;
    g.add(x1, f)
}

/// Binds freshly created leaves for a block given its tensors in [`BLOCK_PARAMS`] order.
pub fn bind_block(g: &mut Graph, tensors: &[Tensor]) -> BlockVars {
    assert_eq!(tensors.len(), BLOCK_PARAMS.len());
    BlockVars(std::array::from_fn(|i| g.leaf(tensors[i].clone())))
}
