//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node to the [`Graph`]; nodes are therefore stored
//! in topological order and [`Graph::backward`] visits them once, last to
//! first. Values are always treated as matrices: the last axis is the column
//! axis and all leading axes are folded into rows.

use super::tensor::{gemm, logsumexp, Tensor};
use crate::error::{dim_err, Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, b_t: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Tanh(Var),
    Exp(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax(Var),
    LogSoftmax(Var),
    GatherRows { table: Var, idx: Vec<usize> },
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    MeanRows(Var),
    PairAdd { a: Var, b: Var },
    SumAll(Var),
    L2NormalizeRows { x: Var, norms: Vec<f64> },
    /// Scalar whose input gradients were computed during the forward pass.
    Fused { inputs: Vec<(Var, Vec<f64>)> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Computation record.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: &[f64]) {
    match slot {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
        None => *slot = Some(delta.to_vec()),
    }
}

fn accumulate_owned(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
        None => *slot = Some(delta),
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input (parameter or data).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.leaf(value)
    }

    /// `a · b` for rank-2 operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(dim_err("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul { a, b, b_t: false }))
    }

    /// `a · bᵀ` for rank-2 operands with equal column counts.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.cols() {
            return Err(dim_err("matmul_nt", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), true, &mut out, false);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul { a, b, b_t: true }))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// Adds the vector `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.len() != ta.cols() {
            return Err(dim_err("add_row", ta.shape(), tb.shape()));
        }
        let b = tb.data();
        let mut t = ta.clone();
        for row in t.data_mut().chunks_mut(b.len()) {
            row.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(self.push(t, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x * c);
        self.push(t, Op::Scale(a, c))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(gelu);
        self.push(t, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::exp);
        self.push(t, Op::Exp(a))
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tx.shape().len() != 2 || tw.shape().len() != 2 || tx.cols() != tw.rows() || tb.len() != tw.cols() {
            return Err(dim_err("linear", tx.shape(), tw.shape()));
        }
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    /// Row-wise layer normalization with learned gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = shape2(tx);
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.len() != cols || b.len() != cols {
            return Err(dim_err("layer_norm", tx.shape(), g.shape()));
        }
        let mut xhat = Vec::with_capacity(rows * cols);
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * cols);
        for row in tx.data().chunks(cols) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g.data()[j] + b.data()[j]);
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        ))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let cols = ta.cols();
        let mut out = Vec::with_capacity(ta.len());
        for row in ta.data().chunks(cols) {
            let lse = logsumexp(row);
            out.extend(row.iter().map(|&v| (v - lse).exp()));
        }
        let t = Tensor::new(ta.shape().to_vec(), out).expect("shape preserved");
        self.push(t, Op::Softmax(a))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let out = super::tensor::log_softmax_rows(ta.data(), ta.cols());
        let t = Tensor::new(ta.shape().to_vec(), out).expect("shape preserved");
        self.push(t, Op::LogSoftmax(a))
    }

    /// Selects rows of `table` by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let cols = tt.cols();
        let rows = tt.rows();
        if idx.is_empty() {
            return Err(dim_err("gather_rows", tt.shape(), &[0]));
        }
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(dim_err("gather_rows", tt.shape(), &[i]));
            }
            out.extend_from_slice(tt.row(i));
        }
        let t = Tensor::matrix(idx.len(), cols, out)?;
        Ok(self.push(
            t,
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Stacks matrices with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let tp = self.value(p);
            if tp.cols() != cols {
                return Err(dim_err("concat_rows", self.value(parts[0]).shape(), tp.shape()));
            }
            rows += tp.rows();
            out.extend_from_slice(tp.data());
        }
        let t = Tensor::matrix(rows, cols, out)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec())))
    }

    /// Rows `start..start+len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let cols = tx.cols();
        if len == 0 || start + len > tx.rows() {
            return Err(dim_err("slice_rows", tx.shape(), &[start, len]));
        }
        let data = tx.data()[start * cols..(start + len) * cols].to_vec();
        let t = Tensor::matrix(len, cols, data)?;
        Ok(self.push(t, Op::SliceRows { x, start }))
    }

    /// Mean over rows, producing a `1×cols` matrix.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let (rows, cols) = shape2(tx);
        let mut out = vec![0.0; cols];
        for row in tx.data().chunks(cols) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= rows as f64);
        let t = Tensor::matrix(1, cols, out).expect("cols > 0");
        self.push(t, Op::MeanRows(x))
    }

    /// Outer broadcast sum: row `t·U + u` equals `a[t] + b[u]`.
    pub fn pair_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(dim_err("pair_add", ta.shape(), tb.shape()));
        }
        let (tr, ur, cols) = (ta.rows(), tb.rows(), ta.cols());
        let mut out = Vec::with_capacity(tr * ur * cols);
        for arow in ta.data().chunks(cols) {
            for brow in tb.data().chunks(cols) {
                out.extend(arow.iter().zip(brow).map(|(x, y)| x + y));
            }
        }
        let t = Tensor::matrix(tr * ur, cols, out)?;
        Ok(self.push(t, Op::PairAdd { a, b }))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    /// Unit-L2 rows; errors on a zero row.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let cols = tx.cols();
        let mut norms = Vec::with_capacity(tx.rows());
        let mut out = Vec::with_capacity(tx.len());
        let mut zero = Vec::new();
        for (i, row) in tx.data().chunks(cols).enumerate() {
            let n = super::tensor::l2_norm(row);
            if n == 0.0 {
                zero.push(i.to_string());
            }
            norms.push(n);
            out.extend(row.iter().map(|v| v / n));
        }
        if !zero.is_empty() {
            return Err(Error::Normalization(format!("rows {}", crate::error::IdList(&zero))));
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(t, Op::L2NormalizeRows { x, norms }))
    }

    /// Registers a scalar computed outside the tape together with its
    /// gradient with respect to each input.
    pub fn fused_scalar(&mut self, value: f64, inputs: Vec<(Var, Vec<f64>)>) -> Var {
        debug_assert!(inputs.iter().all(|(v, g)| self.value(*v).len() == g.len()));
        self.push(Tensor::scalar(value), Op::Fused { inputs })
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for &(v, w) in terms {
            let s = self.scale(v, w);
            acc = Some(match acc {
                Some(a) => self.add(a, s)?,
                None => s,
            });
        }
        acc.ok_or_else(|| Error::Input("empty weighted sum".into()))
    }

    /// Reverse pass from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Grads { grads }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, b_t } => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = shape2(ta);
                let n = node.value.cols();
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; k * n];
                if *b_t {
                    // C = A Bsᵀ, Bs: n×k
                    gemm(m, n, k, g, false, tb.data(), false, &mut da, false);
                    gemm(n, m, k, g, true, ta.data(), false, &mut db, false);
                } else {
                    gemm(m, n, k, g, false, tb.data(), true, &mut da, false);
                    gemm(k, m, n, ta.data(), true, g, false, &mut db, false);
                }
                accumulate_owned(&mut grads[a.0], da);
                accumulate_owned(&mut grads[b.0], db);
            }
            Op::Add(a, b) => {
                accumulate(&mut grads[a.0], g);
                accumulate(&mut grads[b.0], g);
            }
            Op::Sub(a, b) => {
                accumulate(&mut grads[a.0], g);
                accumulate_owned(&mut grads[b.0], g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                accumulate_owned(&mut grads[a.0], g.iter().zip(tb).map(|(x, y)| x * y).collect());
                accumulate_owned(&mut grads[b.0], g.iter().zip(ta).map(|(x, y)| x * y).collect());
            }
            Op::AddRow(a, bias) => {
                let cols = node.value.cols();
                let mut db = vec![0.0; cols];
                for row in g.chunks(cols) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                accumulate(&mut grads[a.0], g);
                accumulate_owned(&mut grads[bias.0], db);
            }
            Op::Scale(a, c) => {
                accumulate_owned(&mut grads[a.0], g.iter().map(|v| v * c).collect());
            }
            Op::Gelu(a) => {
                let x = val(*a).data();
                accumulate_owned(&mut grads[a.0], g.iter().zip(x).map(|(d, &x)| d * gelu_grad(x)).collect());
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                accumulate_owned(&mut grads[a.0], g.iter().zip(y).map(|(d, y)| d * (1.0 - y * y)).collect());
            }
            Op::Exp(a) => {
                let y = node.value.data();
                accumulate_owned(&mut grads[a.0], g.iter().zip(y).map(|(d, y)| d * y).collect());
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let cols = node.value.cols();
                let gam = val(*gamma).data();
                let mut dx = vec![0.0; g.len()];
                let mut dg = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                for (r, ((grow, hrow), dxrow)) in g
                    .chunks(cols)
                    .zip(xhat.chunks(cols))
                    .zip(dx.chunks_mut(cols))
                    .enumerate()
                {
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..cols {
                        let dh = grow[j] * gam[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hrow[j];
                        dg[j] += grow[j] * hrow[j];
                        dbeta[j] += grow[j];
                    }
                    mean_dh /= cols as f64;
                    mean_dh_h /= cols as f64;
                    for j in 0..cols {
                        let dh = grow[j] * gam[j];
                        dxrow[j] = rstd[r] * (dh - mean_dh - hrow[j] * mean_dh_h);
                    }
                }
                accumulate_owned(&mut grads[x.0], dx);
                accumulate_owned(&mut grads[gamma.0], dg);
                accumulate_owned(&mut grads[beta.0], dbeta);
            }
            Op::Softmax(a) => {
                let cols = node.value.cols();
                let mut dx = Vec::with_capacity(g.len());
                for (grow, yrow) in g.chunks(cols).zip(node.value.data().chunks(cols)) {
                    let s: f64 = grow.iter().zip(yrow).map(|(d, y)| d * y).sum();
                    dx.extend(grow.iter().zip(yrow).map(|(d, y)| y * (d - s)));
                }
                accumulate_owned(&mut grads[a.0], dx);
            }
            Op::LogSoftmax(a) => {
                let cols = node.value.cols();
                let mut dx = Vec::with_capacity(g.len());
                for (grow, yrow) in g.chunks(cols).zip(node.value.data().chunks(cols)) {
                    let s: f64 = grow.iter().sum();
                    dx.extend(grow.iter().zip(yrow).map(|(d, y)| d - y.exp() * s));
                }
                accumulate_owned(&mut grads[a.0], dx);
            }
            Op::GatherRows { table, idx } => {
                let cols = node.value.cols();
                let slot = grads[table.0].get_or_insert_with(|| vec![0.0; val(*table).len()]);
                for (k, &i) in idx.iter().enumerate() {
                    let src = &g[k * cols..(k + 1) * cols];
                    slot[i * cols..(i + 1) * cols]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(d, v)| *d += v);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = val(*p).len();
                    accumulate(&mut grads[p.0], &g[off..off + n]);
                    off += n;
                }
            }
            Op::SliceRows { x, start } => {
                let cols = node.value.cols();
                let slot = grads[x.0].get_or_insert_with(|| vec![0.0; val(*x).len()]);
                slot[start * cols..start * cols + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, v)| *d += v);
            }
            Op::MeanRows(x) => {
                let tx = val(*x);
                let rows = tx.rows() as f64;
                let mut dx = Vec::with_capacity(tx.len());
                for _ in 0..tx.rows() {
                    dx.extend(g.iter().map(|v| v / rows));
                }
                accumulate_owned(&mut grads[x.0], dx);
            }
            Op::PairAdd { a, b } => {
                let (ta, tb) = (val(*a), val(*b));
                let cols = ta.cols();
                let ur = tb.rows();
                let mut da = vec![0.0; ta.len()];
                let mut db = vec![0.0; tb.len()];
                for (r, grow) in g.chunks(cols).enumerate() {
                    let (t, u) = (r / ur, r % ur);
                    for j in 0..cols {
                        da[t * cols + j] += grow[j];
                        db[u * cols + j] += grow[j];
                    }
                }
                accumulate_owned(&mut grads[a.0], da);
                accumulate_owned(&mut grads[b.0], db);
            }
            Op::SumAll(x) => {
                let n = val(*x).len();
                accumulate_owned(&mut grads[x.0], vec![g[0]; n]);
            }
            Op::L2NormalizeRows { x, norms } => {
                let cols = node.value.cols();
                let mut dx = Vec::with_capacity(g.len());
                for ((grow, yrow), n) in g.chunks(cols).zip(node.value.data().chunks(cols)).zip(norms) {
                    let s: f64 = grow.iter().zip(yrow).map(|(d, y)| d * y).sum();
                    dx.extend(grow.iter().zip(yrow).map(|(d, y)| (d - y * s) / n));
                }
                accumulate_owned(&mut grads[x.0], dx);
            }
            Op::Fused { inputs } => {
                let up = g[0];
                for (v, gi) in inputs {
                    accumulate_owned(&mut grads[v.0], gi.iter().map(|x| x * up).collect());
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn linear_identity_weights() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::identity(2));
        let w = g.leaf(m(&[&[1.5, -2.0, 0.5], &[3.0, 4.0, -1.0]]));
        let b = g.leaf(Tensor::zeros(&[3]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y), g.value(w));
    }

    #[test]
    fn linear_shape_error_names_shapes() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 3]));
        let w = g.leaf(Tensor::zeros(&[2, 2]));
        let b = g.leaf(Tensor::zeros(&[2]));
        let err = g.linear(x, w, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.leaf(m(&[&[1000.0, 0.0], &[-3.0, 2.0]]));
        let y = g.log_softmax(x);
        for row in g.value(y).data().chunks(2) {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| v.is_finite()));
        }
        assert!(g.value(y).data()[0].abs() < 1e-12);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![2.0]));
        let d = g.detach(x);
        let y = g.mul(x, d).unwrap();
        let s = g.sum_all(y);
        let gr = g.backward(s);
        assert_eq!(gr.wrt(x).unwrap(), &[2.0]);
        assert_eq!(gr.wrt(d).unwrap(), &[2.0]);
    }

    #[test]
    fn pair_add_layout() {
        let mut g = Graph::new();
        let a = g.leaf(m(&[&[1.0], &[2.0]]));
        let b = g.leaf(m(&[&[10.0], &[20.0], &[30.0]]));
        let c = g.pair_add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0, 21.0, 31.0, 12.0, 22.0, 32.0]);
    }
}
