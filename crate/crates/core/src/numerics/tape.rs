//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is an arena of nodes appended in execution order, so the
//! record is topologically sorted by construction. [`Var`] is a handle into
//! one tape; handles from a different tape are rejected by [`Tape::backward`].

use std::cell::Cell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::tensor::{kernels, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

const LAYER_NORM_EPS: f64 = 1e-5;
const L2_EPS: f64 = 1e-12;

thread_local! {
    static CORRUPT_OP: Cell<Option<&'static str>> = const { Cell::new(None) };
}

/// Test hook: scale the backward pass of the named primitive by 1.5 on the
/// current thread. Used to prove that gradient checks catch a broken rule.
pub fn corrupt_gradient_of(op: Option<&'static str>) {
    CORRUPT_OP.with(|c| c.set(op));
}

fn corruption_factor(op: &str) -> f64 {
    CORRUPT_OP.with(|c| match c.get() {
        Some(name) if name == op => 1.5,
        _ => 1.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(usize, usize),
    MatmulNt(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    ScaleBy(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Exp(usize),
    Log(usize),
    Sigmoid(usize),
    Gelu(usize),
    Powf(usize, f64),
    Clamp(usize, f64, f64),
    LayerNorm { x: usize, gamma: usize, beta: usize, rstd: Vec<f64> },
    L2Normalize { x: usize, norms: Vec<f64> },
    GatherRows(usize, Vec<usize>),
    GatherElems(usize, Vec<usize>),
    SliceCols(usize, usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    MaskedSoftmax(usize),
    LogSumExpRows(usize, Option<Arc<Vec<bool>>>),
    MaskedMeanRows(usize, Vec<usize>),
    Sum(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul(..) => "matmul",
            Op::MatmulNt(..) => "matmul_nt",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::ScaleBy(..) => "scale_by",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sigmoid(..) => "sigmoid",
            Op::Gelu(..) => "gelu",
            Op::Powf(..) => "powf",
            Op::Clamp(..) => "clamp",
            Op::LayerNorm { .. } => "layer_norm",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::GatherRows(..) => "gather_rows",
            Op::GatherElems(..) => "gather_elems",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::MaskedSoftmax(..) => "masked_softmax",
            Op::LogSumExpRows(..) => "logsumexp_rows",
            Op::MaskedMeanRows(..) => "masked_mean_rows",
            Op::Sum(..) => "sum",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `∂loss/∂v`, or `None` if `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.idx).and_then(Option::take)
    }
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu(x: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (K * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4;
    let u = K * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * K * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var { tape: self.id, idx: self.nodes.len() - 1 }
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        v.idx
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[self.idx(v)]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    /// Trainable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-trainable input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.node(v).value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = ta.matmul(tb)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Matmul(a.idx, b.idx), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(Error::Shape(format!("matmul_nt {:?} by {:?}ᵀ", ta.shape(), tb.shape())));
        }
        let mut out = Tensor::zeros(ta.rows(), tb.rows());
        kernels::mm_nt(ta.data(), tb.data(), out.data_mut(), ta.rows(), ta.cols(), tb.rows());
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatmulNt(a.idx, b.idx), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(out, Op::Transpose(a.idx), rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        for (o, &y) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += y;
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a.idx, b.idx), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let mut out = self.value(a).clone();
        for (o, &y) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o -= y;
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a.idx, b.idx), rg))
    }

    /// Broadcast-add a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let [_, cols] = self.shape(a);
        if self.shape(row) != [1, cols] {
            return Err(Error::Shape(format!("add_row {:?} + {:?}", self.shape(a), self.shape(row))));
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for chunk in out.data_mut().chunks_mut(cols.max(1)) {
            for (o, &y) in chunk.iter_mut().zip(&r) {
                *o += y;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(out, Op::AddRow(a.idx, row.idx), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let mut out = self.value(a).clone();
        for (o, &y) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= y;
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a.idx, b.idx), rg))
    }

    /// Multiply every element of `a` by the `1 × 1` variable `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != [1, 1] {
            return Err(Error::Shape(format!("scale_by needs a scalar, got {:?}", self.shape(s))));
        }
        let k = self.value(s).item();
        let out = self.value(a).map(|v| v * k);
        let rg = self.rg(&[a, s]);
        Ok(self.push(out, Op::ScaleBy(a.idx, s.idx), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|v| v * k);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a.idx, k), rg)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|v| v + k);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a.idx), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        self.push(out, Op::Exp(a.idx), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        let rg = self.rg(&[a]);
        self.push(out, Op::Log(a.idx), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a.idx), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        let rg = self.rg(&[a]);
        self.push(out, Op::Gelu(a.idx), rg)
    }

    /// `a^k` elementwise; inputs must be positive when `k` is fractional.
    pub fn powf(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|v| v.powf(k));
        let rg = self.rg(&[a]);
        self.push(out, Op::Powf(a.idx, k), rg)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|v| v.clamp(lo, hi));
        let rg = self.rg(&[a]);
        self.push(out, Op::Clamp(a.idx, lo, hi), rg)
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1 × cols`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let [rows, cols] = self.shape(x);
        if self.shape(gamma) != [1, cols] || self.shape(beta) != [1, cols] {
            return Err(Error::Shape("layer_norm affine parameters".into()));
        }
        let xv = self.value(x);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = Tensor::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd.push(rs);
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = (row[c] - mean) * rs * g[c] + b[c];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(out, Op::LayerNorm { x: x.idx, gamma: gamma.idx, beta: beta.idx, rstd }, rg))
    }

    /// Scale each row to unit Euclidean length.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let n = (xv.row(r).iter().map(|v| v * v).sum::<f64>() + L2_EPS).sqrt();
            norms.push(n);
            for v in out.row_mut(r) {
                *v /= n;
            }
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::L2Normalize { x: x.idx, norms }, rg)
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let cols = av.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= av.rows() {
                return Err(Error::Shape(format!("gather row {r} of {}", av.rows())));
            }
            data.extend_from_slice(av.row(r));
        }
        let out = Tensor::new(rows.len(), cols, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::GatherRows(a.idx, rows.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let idx: Vec<usize> = (start..end).collect();
        self.gather_rows(a, &idx)
    }

    /// Pick individual elements by flat (row-major) index into a `k × 1` column.
    pub fn gather_elems(&mut self, a: Var, flat: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let mut data = Vec::with_capacity(flat.len());
        for &i in flat {
            data.push(*av.data().get(i).ok_or_else(|| Error::Shape(format!("element {i} out of range")))?);
        }
        let out = Tensor::new(flat.len(), 1, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::GatherElems(a.idx, flat.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.cols() {
            return Err(Error::Shape(format!("slice cols {start}..{end} of {}", av.cols())));
        }
        let mut out = Tensor::zeros(av.rows(), end - start);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..end]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SliceCols(a.idx, start), rg))
    }

    /// Stack along the time (row) axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|&p| self.shape(p)[1]).unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::Shape(format!("concat_rows width {} vs {cols}", t.cols())));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(rows, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatRows(parts.iter().map(|p| p.idx).collect()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.shape(p)[0]).unwrap_or(0);
        let mut cols = 0;
        for &p in parts {
            if self.shape(p)[0] != rows {
                return Err(Error::Shape("concat_cols row mismatch".into()));
            }
            cols += self.shape(p)[1];
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[off..off + t.cols()].copy_from_slice(t.row(r));
            }
            off += t.cols();
        }
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.iter().map(|p| p.idx).collect()), rg))
    }

    /// Row-wise softmax restricted to permitted entries. Rows with no
    /// permitted entry come out as zeros.
    pub fn masked_softmax(&mut self, logits: Var, mask: Arc<Vec<bool>>) -> Result<Var> {
        let lv = self.value(logits);
        if mask.len() != lv.len() {
            return Err(Error::Shape(format!("mask of {} for {:?} logits", mask.len(), lv.shape())));
        }
        let cols = lv.cols();
        let mut out = Tensor::zeros(lv.rows(), cols);
        for r in 0..lv.rows() {
            let row = lv.row(r);
            let m = &mask[r * cols..(r + 1) * cols];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &ok)| ok)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let orow = out.row_mut(r);
            let mut denom = 0.0;
            for c in 0..cols {
                if m[c] {
                    let e = (row[c] - max).exp();
                    orow[c] = e;
                    denom += e;
                }
            }
            for v in orow.iter_mut() {
                *v /= denom;
            }
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(out, Op::MaskedSoftmax(logits.idx), rg))
    }

    /// `log Σ exp` over each row (optionally restricted by a mask) as an
    /// `rows × 1` column. Rows with nothing permitted yield 0.
    pub fn logsumexp_rows(&mut self, x: Var, mask: Option<Arc<Vec<bool>>>) -> Result<Var> {
        let xv = self.value(x);
        if let Some(m) = &mask {
            if m.len() != xv.len() {
                return Err(Error::Shape("logsumexp mask size".into()));
            }
        }
        let cols = xv.cols();
        let mut out = Tensor::zeros(xv.rows(), 1);
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let allowed = |c: usize| mask.as_ref().map_or(true, |m| m[r * cols + c]);
            let max = (0..cols).filter(|&c| allowed(c)).map(|c| row[c]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let s: f64 = (0..cols).filter(|&c| allowed(c)).map(|c| (row[c] - max).exp()).sum();
            out.set(r, 0, max + s.ln());
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::LogSumExpRows(x.idx, mask), rg))
    }

    /// Mean of the listed rows, as a `1 × cols` row.
    pub fn masked_mean_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let mut out = Tensor::zeros(1, xv.cols());
        if !rows.is_empty() {
            for &r in rows {
                if r >= xv.rows() {
                    return Err(Error::Shape(format!("mean row {r} of {}", xv.rows())));
                }
                for (o, &v) in out.data_mut().iter_mut().zip(xv.row(r)) {
                    *o += v;
                }
            }
            let k = rows.len() as f64;
            for o in out.data_mut() {
                *o /= k;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::MaskedMeanRows(x.idx, rows.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a.idx), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Populate `∂loss/∂v` for every variable that requires a gradient.
    /// A tape supports exactly one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if loss.tape != self.id {
            return Err(Error::Autodiff("loss was not recorded on this tape".into()));
        }
        if self.shape(loss) != [1, 1] {
            return Err(Error::Autodiff(format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        self.backward_seeded(&[(loss, Tensor::scalar(1.0))])
    }

    /// Backward pass starting from arbitrary output cotangents.
    pub fn backward_seeded(&mut self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Autodiff("backward already ran on this tape".into()));
        }
        for (v, g) in seeds {
            if v.tape != self.id {
                return Err(Error::Autodiff("seed variable was not recorded on this tape".into()));
            }
            if g.shape() != self.shape(*v) {
                return Err(Error::Shape("seed gradient shape".into()));
            }
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            accumulate(&mut grads, v.idx, g.data(), g.shape());
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let f = corruption_factor(node.op.name());
        let val = |j: usize| &self.nodes[j].value;
        let needs = |j: usize| self.nodes[j].requires_grad;
        let gd = g.data();
        let scaled = |v: Vec<f64>| -> Vec<f64> {
            if f == 1.0 {
                v
            } else {
                v.into_iter().map(|x| x * f).collect()
            }
        };
        let send = |grads: &mut [Option<Tensor>], j: usize, d: Vec<f64>| {
            let shape = self.nodes[j].value.shape();
            accumulate(grads, j, &scaled(d), shape);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if needs(*a) {
                    let mut d = vec![0.0; m * k];
                    kernels::mm_nt(gd, tb.data(), &mut d, m, n, k);
                    send(grads, *a, d);
                }
                if needs(*b) {
                    let mut d = vec![0.0; k * n];
                    kernels::mm_tn(ta.data(), gd, &mut d, k, m, n);
                    send(grads, *b, d);
                }
            }
            Op::MatmulNt(a, b) => {
                // out[m×n] = a[m×k] · b[n×k]ᵀ
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                if needs(*a) {
                    let mut d = vec![0.0; m * k];
                    kernels::mm_nn(gd, tb.data(), &mut d, m, n, k);
                    send(grads, *a, d);
                }
                if needs(*b) {
                    let mut d = vec![0.0; n * k];
                    kernels::mm_tn(gd, ta.data(), &mut d, n, m, k);
                    send(grads, *b, d);
                }
            }
            Op::Transpose(a) => {
                if needs(*a) {
                    send(grads, *a, g.transpose().into_data());
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    send(grads, *a, gd.to_vec());
                }
                if needs(*b) {
                    send(grads, *b, gd.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    send(grads, *a, gd.to_vec());
                }
                if needs(*b) {
                    send(grads, *b, gd.iter().map(|v| -v).collect());
                }
            }
            Op::AddRow(a, row) => {
                if needs(*a) {
                    send(grads, *a, gd.to_vec());
                }
                if needs(*row) {
                    let cols = g.cols();
                    let mut d = vec![0.0; cols];
                    for chunk in gd.chunks(cols.max(1)) {
                        for (o, v) in d.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                    send(grads, *row, d);
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    send(grads, *a, gd.iter().zip(val(*b).data()).map(|(g, y)| g * y).collect());
                }
                if needs(*b) {
                    send(grads, *b, gd.iter().zip(val(*a).data()).map(|(g, x)| g * x).collect());
                }
            }
            Op::ScaleBy(a, s) => {
                let k = val(*s).item();
                if needs(*a) {
                    send(grads, *a, gd.iter().map(|v| v * k).collect());
                }
                if needs(*s) {
                    let d: f64 = gd.iter().zip(val(*a).data()).map(|(g, x)| g * x).sum();
                    send(grads, *s, vec![d]);
                }
            }
            Op::Scale(a, k) => send(grads, *a, gd.iter().map(|v| v * k).collect()),
            Op::AddScalar(a) => send(grads, *a, gd.to_vec()),
            Op::Exp(a) => {
                let y = node.value.data();
                send(grads, *a, gd.iter().zip(y).map(|(g, y)| g * y).collect());
            }
            Op::Log(a) => {
                send(grads, *a, gd.iter().zip(val(*a).data()).map(|(g, x)| g / x).collect());
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                send(grads, *a, gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect());
            }
            Op::Gelu(a) => {
                send(grads, *a, gd.iter().zip(val(*a).data()).map(|(g, &x)| g * gelu_grad(x)).collect());
            }
            Op::Powf(a, k) => {
                let d = gd
                    .iter()
                    .zip(val(*a).data())
                    .map(|(g, &x)| if *k == 0.0 { 0.0 } else { g * k * x.powf(k - 1.0) })
                    .collect();
                send(grads, *a, d);
            }
            Op::Clamp(a, lo, hi) => {
                let d = gd
                    .iter()
                    .zip(val(*a).data())
                    .map(|(g, &x)| if x >= *lo && x <= *hi { *g } else { 0.0 })
                    .collect();
                send(grads, *a, d);
            }
            Op::LayerNorm { x, gamma, beta, rstd } => {
                let xv = val(*x);
                let gm = val(*gamma).data();
                let [rows, cols] = xv.shape();
                let mut dx = vec![0.0; rows * cols];
                let mut dg = vec![0.0; cols];
                let mut db = vec![0.0; cols];
                for r in 0..rows {
                    let row = xv.row(r);
                    let mean = row.iter().sum::<f64>() / cols as f64;
                    let rs = rstd[r];
                    let grow = &gd[r * cols..(r + 1) * cols];
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for c in 0..cols {
                        let xhat = (row[c] - mean) * rs;
                        let dxhat = grow[c] * gm[c];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        dg[c] += grow[c] * xhat;
                        db[c] += grow[c];
                    }
                    let n = cols as f64;
                    for c in 0..cols {
                        let xhat = (row[c] - mean) * rs;
                        let dxhat = grow[c] * gm[c];
                        dx[r * cols + c] = rs * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
                    }
                }
                if needs(*x) {
                    send(grads, *x, dx);
                }
                if needs(*gamma) {
                    send(grads, *gamma, dg);
                }
                if needs(*beta) {
                    send(grads, *beta, db);
                }
            }
            Op::L2Normalize { x, norms } => {
                let y = &node.value;
                let cols = y.cols();
                let mut d = vec![0.0; y.len()];
                for (r, &n) in norms.iter().enumerate() {
                    let yr = y.row(r);
                    let gr = &gd[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        d[r * cols + c] = (gr[c] - yr[c] * dot) / n;
                    }
                }
                send(grads, *x, d);
            }
            Op::GatherRows(a, rows) => {
                let src = val(*a);
                let cols = src.cols();
                let mut d = vec![0.0; src.len()];
                for (k, &r) in rows.iter().enumerate() {
                    for c in 0..cols {
                        d[r * cols + c] += gd[k * cols + c];
                    }
                }
                send(grads, *a, d);
            }
            Op::GatherElems(a, flat) => {
                let mut d = vec![0.0; val(*a).len()];
                for (k, &i) in flat.iter().enumerate() {
                    d[i] += gd[k];
                }
                send(grads, *a, d);
            }
            Op::SliceCols(a, start) => {
                let src = val(*a);
                let w = g.cols();
                let mut d = vec![0.0; src.len()];
                for r in 0..src.rows() {
                    d[r * src.cols() + start..r * src.cols() + start + w].copy_from_slice(g.row(r));
                }
                send(grads, *a, d);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    if needs(p) {
                        send(grads, p, gd[off..off + n].to_vec());
                    }
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let t = val(p);
                    if needs(p) {
                        let mut d = Vec::with_capacity(t.len());
                        for r in 0..t.rows() {
                            d.extend_from_slice(&g.row(r)[off..off + t.cols()]);
                        }
                        send(grads, p, d);
                    }
                    off += t.cols();
                }
            }
            Op::MaskedSoftmax(a) => {
                let y = &node.value;
                let cols = y.cols();
                let mut d = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &gd[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        d[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                send(grads, *a, d);
            }
            Op::LogSumExpRows(a, mask) => {
                let xv = val(*a);
                let cols = xv.cols();
                let mut d = vec![0.0; xv.len()];
                for r in 0..xv.rows() {
                    let lse = node.value.get(r, 0);
                    for c in 0..cols {
                        let ok = mask.as_ref().map_or(true, |m| m[r * cols + c]);
                        if ok {
                            d[r * cols + c] = gd[r] * (xv.get(r, c) - lse).exp();
                        }
                    }
                }
                send(grads, *a, d);
            }
            Op::MaskedMeanRows(a, rows) => {
                let src = val(*a);
                let cols = src.cols();
                let mut d = vec![0.0; src.len()];
                let k = rows.len() as f64;
                for &r in rows {
                    for c in 0..cols {
                        d[r * cols + c] += gd[c] / k;
                    }
                }
                send(grads, *a, d);
            }
            Op::Sum(a) => {
                let n = val(*a).len();
                send(grads, *a, vec![gd[0]; n]);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], j: usize, d: &[f64], shape: [usize; 2]) {
    match &mut grads[j] {
        Some(t) => {
            for (o, v) in t.data_mut().iter_mut().zip(d) {
                *o += v;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape[0], shape[1], d.to_vec()).expect("gradient shape"));
        }
    }
}
