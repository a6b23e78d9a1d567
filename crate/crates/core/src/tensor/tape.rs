use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::kernels::{dot, gemm_nn, gemm_nt, gemm_tn};
use super::{axis_split, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a value recorded on a [`Tape`].
///
/// A `Var` is only meaningful for the tape (and tape generation) that
/// produced it; using it after [`Tape::reset`] is a stale-tape error.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    idx: usize,
    tape: u64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    SelectCols(Var, Vec<usize>),
    MaskedFill(Var, Vec<bool>),
    ShiftCols(Var, usize),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LogSumExp(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Unfold(Var, usize),
    Dropout(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of primitive operations.
///
/// Every forward pass records onto a tape; [`Tape::backward`] replays the
/// record in reverse exactly once and accumulates gradients by summation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: fresh_id(),
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            grad_enabled: true,
        }
    }

    /// A tape on which nothing requires a gradient. Used for inference.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Tape::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Releases every recorded node. Outstanding `Var`s become stale.
    pub fn reset(&mut self) {
        self.id = fresh_id();
        self.nodes.clear();
        self.grads.clear();
        self.backward_done = false;
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::Tape("variable does not belong to the active tape".into()));
        }
        Ok(())
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.idx]
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.grad_enabled,
        });
        self.grads.push(None);
        Var { idx, tape: self.id }
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.idx].requires_grad)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copies the value of `v` into a fresh constant leaf, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        self.check(v)?;
        let value = self.node(v).value.clone();
        Ok(self.constant(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.idx].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.idx].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.idx].requires_grad
    }

    /// Accumulated gradient of `v` after [`Tape::backward`], if any reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.idx)?.as_ref()?;
        Some(Tensor {
            shape: self.nodes[v.idx].value.shape.clone(),
            data: g.clone(),
        })
    }

    // ---- arithmetic ----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::Dimension {
                op: "matmul_nt",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b), rg))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension {
                op: name,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a bias vector `[n]` along the trailing axis of `x: [..., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check(x)?;
        self.check(bias)?;
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.shape().len() != 1 || tx.cols() != tb.len() {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let n = tb.len();
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.needs(&[x, bias]);
        Ok(self.push(t, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.map(x, Op::Scale(x, factor), |v| v * factor)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var> {
        self.map(x, Op::AddConst(x), |v| v + c)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Log(x), f64::ln)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Relu(x), |v| v.max(0.0))
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        self.check(x)?;
        let tx = self.value(x);
        let t = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|&v| f(v)).collect())?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, op, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.value(x).data().iter().sum();
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), rg))
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        self.check_axis(&shape, axis, "sum_axis")?;
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += src[(o * n + a) * inner + i];
                }
            }
        }
        let t = Tensor::new(removed_axis(&shape, axis), out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::SumAxis(x, axis), rg))
    }

    fn check_axis(&self, shape: &[usize], axis: usize, op: &'static str) -> Result<()> {
        if axis >= shape.len() {
            return Err(Error::Dimension {
                op,
                lhs: shape.to_vec(),
                rhs: vec![axis],
            });
        }
        Ok(())
    }

    // ---- layout ----------------------------------------------------------

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let tx = self.value(x);
        if tx.shape().len() != 2 {
            return Err(Error::Shape(format!("transpose needs a matrix, got {:?}", tx.shape())));
        }
        let (r, c) = (tx.shape()[0], tx.shape()[1]);
        let src = tx.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let t = Tensor::new(vec![c, r], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        for &v in xs {
            self.check(v)?;
        }
        let base = self.shape(first).to_vec();
        self.check_axis(&base, axis, "concat")?;
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = vec![0.0; outer * total * inner];
        let mut offset = 0;
        for &v in xs {
            let t = self.value(v);
            let n = t.shape()[axis];
            for o in 0..outer {
                let src = &t.data()[o * n * inner..(o + 1) * n * inner];
                let dst = (o * total + offset) * inner;
                out[dst..dst + n * inner].copy_from_slice(src);
            }
            offset += n;
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(shape, out)?;
        let rg = self.needs(xs);
        Ok(self.push(t, Op::Concat(xs.to_vec(), axis), rg))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check(x)?;
        let tx = self.value(x);
        let (r, c) = matrix_dims(tx, "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(Error::Shape(format!("column slice {start}..{} of {c}", start + len)));
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&tx.data()[i * c + start..i * c + start + len]);
        }
        let t = Tensor::new(vec![r, len], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::SliceCols(x, start), rg))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check(x)?;
        let tx = self.value(x);
        let (r, c) = matrix_dims(tx, "slice_rows")?;
        if len == 0 || start + len > r {
            return Err(Error::Shape(format!("row slice {start}..{} of {r}", start + len)));
        }
        let t = Tensor::new(vec![len, c], tx.data()[start * c..(start + len) * c].to_vec())?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::SliceRows(x, start), rg))
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.check(table)?;
        let tt = self.value(table);
        let (r, c) = matrix_dims(tt, "gather_rows")?;
        if ids.is_empty() {
            return Err(Error::Shape("gather_rows with no indices".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(Error::Shape(format!("row index {id} out of range for {r} rows")));
            }
            out.extend_from_slice(tt.row(id));
        }
        let t = Tensor::new(vec![ids.len(), c], out)?;
        let rg = self.needs(&[table]);
        Ok(self.push(t, Op::GatherRows(table, ids.to_vec()), rg))
    }

    /// Selects entries along the trailing axis: `out[.., j] = x[.., cols[j]]`.
    pub fn select_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        self.check(x)?;
        let tx = self.value(x);
        let c = tx.cols();
        if cols.is_empty() || cols.iter().any(|&j| j >= c) {
            return Err(Error::Shape(format!("column selection out of range for {c} columns")));
        }
        let rows = tx.len() / c;
        let mut out = Vec::with_capacity(rows * cols.len());
        for i in 0..rows {
            let row = &tx.data()[i * c..(i + 1) * c];
            out.extend(cols.iter().map(|&j| row[j]));
        }
        let mut shape = tx.shape().to_vec();
        match shape.last_mut() {
            Some(last) => *last = cols.len(),
            None => shape.push(cols.len()),
        }
        let t = Tensor::new(shape, out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::SelectCols(x, cols.to_vec()), rg))
    }

    /// Replaces entries where `mask` is true by `value`; those entries get no gradient.
    pub fn masked_fill(&mut self, x: Var, mask: &[bool], value: f64) -> Result<Var> {
        self.check(x)?;
        let tx = self.value(x);
        if mask.len() != tx.len() {
            return Err(Error::Dimension {
                op: "masked_fill",
                lhs: tx.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let data = tx
            .data()
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { value } else { v })
            .collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::MaskedFill(x, mask.to_vec()), rg))
    }

    /// Shifts along the trailing axis by `k`: `out[.., j] = x[.., j-k]`, `fill` for `j < k`.
    pub fn shift_cols(&mut self, x: Var, k: usize, fill: f64) -> Result<Var> {
        self.check(x)?;
        let tx = self.value(x);
        let c = tx.cols();
        let mut data = vec![fill; tx.len()];
        for (dst, src) in data.chunks_mut(c).zip(tx.data().chunks(c)) {
            if k < c {
                dst[k..].copy_from_slice(&src[..c - k]);
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::ShiftCols(x, k), rg))
    }

    // ---- normalisers -----------------------------------------------------

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.normalise(x, axis, "softmax", false)?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::Softmax(x, axis), rg))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.normalise(x, axis, "log_softmax", true)?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::LogSoftmax(x, axis), rg))
    }

    fn normalise(&self, x: Var, axis: usize, op: &'static str, log: bool) -> Result<Tensor> {
        self.check(x)?;
        let tx = self.value(x);
        self.check_axis(tx.shape(), axis, op)?;
        if !tx.is_finite() {
            return Err(Error::Numeric(format!("{op} received a non-finite input")));
        }
        let (outer, n, inner) = axis_split(tx.shape(), axis);
        let src = tx.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * n + a) * inner + i;
                let max = (0..n).map(|a| src[at(a)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..n).map(|a| (src[at(a)] - max).exp()).sum();
                for a in 0..n {
                    let shifted = src[at(a)] - max;
                    out[at(a)] = if log { shifted - z.ln() } else { shifted.exp() / z };
                }
            }
        }
        Tensor::new(tx.shape().to_vec(), out)
    }

    /// `log Σ exp` along `axis`, removing it. Accepts `-inf` entries.
    pub fn logsumexp(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check(x)?;
        let tx = self.value(x);
        self.check_axis(tx.shape(), axis, "logsumexp")?;
        if tx.data().iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Numeric("logsumexp received NaN or +inf".into()));
        }
        let (outer, n, inner) = axis_split(tx.shape(), axis);
        let src = tx.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * n + a) * inner + i;
                let max = (0..n).map(|a| src[at(a)]).fold(f64::NEG_INFINITY, f64::max);
                out[o * inner + i] = if max == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    max + (0..n).map(|a| (src[at(a)] - max).exp()).sum::<f64>().ln()
                };
            }
        }
        let t = Tensor::new(removed_axis(tx.shape(), axis), out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::LogSumExp(x, axis), rg))
    }

    /// Normalises each trailing-axis slice to zero mean and unit variance, then
    /// applies `gain` and `bias`. `eps` is added inside the square root.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        self.check(x)?;
        self.check(gain)?;
        self.check(bias)?;
        let tx = self.value(x);
        let d = tx.cols();
        for p in [gain, bias] {
            if self.shape(p) != [d] {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    lhs: tx.shape().to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = tx.len() / d;
        let mut xhat = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.needs(&[x, gain, bias]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Stacks a centred window of `rf` time steps per row: `[T,C] → [T, rf·C]`,
    /// zero padded at both ends so the output keeps length `T`.
    pub fn unfold_time(&mut self, x: Var, rf: usize) -> Result<Var> {
        self.check(x)?;
        let tx = self.value(x);
        let (t_len, c) = matrix_dims(tx, "unfold_time")?;
        if rf == 0 {
            return Err(Error::Shape("receptive field must be positive".into()));
        }
        let half = rf / 2;
        let mut out = vec![0.0; t_len * rf * c];
        for t in 0..t_len {
            for j in 0..rf {
                let src = t as isize + j as isize - half as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let dst = t * rf * c + j * c;
                out[dst..dst + c].copy_from_slice(tx.row(src as usize));
            }
        }
        let t = Tensor::new(vec![t_len, rf * c], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::Unfold(x, rf), rg))
    }

    /// Same-length 1-D convolution over the time axis.
    ///
    /// `x: [T,C]`, `weight: [rf·C, out]` laid out window-major, `bias: [out]`.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Var, rf: usize) -> Result<Var> {
        let windows = if rf == 1 { x } else { self.unfold_time(x, rf)? };
        let y = self.matmul(windows, weight)?;
        self.add_bias(y, bias)
    }

    /// Inverted dropout; identity when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        self.check(x)?;
        if rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(Error::Numeric(format!("dropout rate {rate} outside [0,1)")));
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let tx = self.value(x);
        let data = tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.needs(&[x]);
        Ok(self.push(t, Op::Dropout(x, mask), rg))
    }

    // ---- reverse pass ----------------------------------------------------

    /// Accumulates `∂root/∂v` into every reachable `v` that requires a gradient.
    ///
    /// May be called once per tape generation; call [`Tape::reset`] before the
    /// next forward pass.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        self.check(root)?;
        if self.backward_done {
            return Err(Error::Tape("backward already ran on this tape; reset it first".into()));
        }
        if !self.value(root).is_scalar() || !self.value(root).shape().is_empty() {
            return Err(Error::Tape(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        self.backward_done = true;
        if !self.nodes[root.idx].requires_grad {
            return Ok(());
        }
        self.grads[root.idx] = Some(vec![1.0]);
        for idx in (0..=root.idx).rev() {
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &g);
            }
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[idx];
        let out = node.value.data();
        // Gradient buffer for an input, or None when it needs no gradient.
        macro_rules! buf {
            ($v:expr) => {
                slot(nodes, grads, $v)
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.idx].value, &nodes[b.idx].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if let Some(ga) = buf!(*a) {
                    gemm_nt(g, tb.data(), ga, m, n, k);
                }
                if let Some(gb) = buf!(*b) {
                    gemm_tn(ta.data(), g, gb, m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (&nodes[a.idx].value, &nodes[b.idx].value);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
                if let Some(ga) = buf!(*a) {
                    gemm_nn(g, tb.data(), ga, m, n, k);
                }
                if let Some(gb) = buf!(*b) {
                    gemm_tn(g, ta.data(), gb, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = buf!(*v) {
                        axpy(gv, g, 1.0);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = buf!(*a) {
                    axpy(ga, g, 1.0);
                }
                if let Some(gb) = buf!(*b) {
                    axpy(gb, g, -1.0);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (nodes[a.idx].value.data(), nodes[b.idx].value.data());
                if let Some(ga) = buf!(*a) {
                    for ((o, &gi), &y) in ga.iter_mut().zip(g).zip(vb) {
                        *o += gi * y;
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for ((o, &gi), &x) in gb.iter_mut().zip(g).zip(va) {
                        *o += gi * x;
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if let Some(gx) = buf!(*x) {
                    axpy(gx, g, 1.0);
                }
                if let Some(gb) = buf!(*bias) {
                    let n = gb.len();
                    for row in g.chunks(n) {
                        axpy(gb, row, 1.0);
                    }
                }
            }
            Op::Scale(x, f) => {
                if let Some(gx) = buf!(*x) {
                    axpy(gx, g, *f);
                }
            }
            Op::AddConst(x) | Op::Reshape(x) => {
                if let Some(gx) = buf!(*x) {
                    axpy(gx, g, 1.0);
                }
            }
            Op::Exp(x) => {
                if let Some(gx) = buf!(*x) {
                    for ((o, &gi), &y) in gx.iter_mut().zip(g).zip(out) {
                        *o += gi * y;
                    }
                }
            }
            Op::Log(x) => {
                let vx = nodes[x.idx].value.data();
                if let Some(gx) = buf!(*x) {
                    for ((o, &gi), &xi) in gx.iter_mut().zip(g).zip(vx) {
                        *o += gi / xi;
                    }
                }
            }
            Op::Relu(x) => {
                let vx = nodes[x.idx].value.data();
                if let Some(gx) = buf!(*x) {
                    for ((o, &gi), &xi) in gx.iter_mut().zip(g).zip(vx) {
                        if xi > 0.0 {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = buf!(*x) {
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(gx) = buf!(*x) {
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|o| *o += s);
                }
            }
            Op::SumAxis(x, axis) => {
                let shape = nodes[x.idx].value.shape();
                let (outer, n, inner) = axis_split(shape, *axis);
                if let Some(gx) = buf!(*x) {
                    for o in 0..outer {
                        for a in 0..n {
                            for i in 0..inner {
                                gx[(o * n + a) * inner + i] += g[o * inner + i];
                            }
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (nodes[x.idx].value.shape()[0], nodes[x.idx].value.shape()[1]);
                if let Some(gx) = buf!(*x) {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Concat(xs, axis) => {
                let total = node.value.shape()[*axis];
                let (outer, _, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for v in xs {
                    let n = nodes[v.idx].value.shape()[*axis];
                    if let Some(gv) = buf!(*v) {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            axpy(&mut gv[o * n * inner..(o + 1) * n * inner], &g[src..src + n * inner], 1.0);
                        }
                    }
                    offset += n;
                }
            }
            Op::SliceCols(x, start) => {
                let c = nodes[x.idx].value.cols();
                let len = node.value.cols();
                if let Some(gx) = buf!(*x) {
                    for (i, grow) in g.chunks(len).enumerate() {
                        axpy(&mut gx[i * c + start..i * c + start + len], grow, 1.0);
                    }
                }
            }
            Op::SliceRows(x, start) => {
                let c = nodes[x.idx].value.cols();
                if let Some(gx) = buf!(*x) {
                    axpy(&mut gx[start * c..start * c + g.len()], g, 1.0);
                }
            }
            Op::GatherRows(table, ids) => {
                let c = nodes[table.idx].value.cols();
                if let Some(gt) = buf!(*table) {
                    for (i, &id) in ids.iter().enumerate() {
                        axpy(&mut gt[id * c..(id + 1) * c], &g[i * c..(i + 1) * c], 1.0);
                    }
                }
            }
            Op::SelectCols(x, cols) => {
                let c = nodes[x.idx].value.cols();
                let k = cols.len();
                if let Some(gx) = buf!(*x) {
                    for (i, grow) in g.chunks(k).enumerate() {
                        for (&j, &gi) in cols.iter().zip(grow) {
                            gx[i * c + j] += gi;
                        }
                    }
                }
            }
            Op::MaskedFill(x, mask) => {
                if let Some(gx) = buf!(*x) {
                    for ((o, &gi), &m) in gx.iter_mut().zip(g).zip(mask) {
                        if !m {
                            *o += gi;
                        }
                    }
                }
            }
            Op::ShiftCols(x, k) => {
                let c = node.value.cols();
                if let Some(gx) = buf!(*x) {
                    if *k < c {
                        for (dst, src) in gx.chunks_mut(c).zip(g.chunks(c)) {
                            axpy(&mut dst[..c - k], &src[*k..], 1.0);
                        }
                    }
                }
            }
            Op::Softmax(x, axis) => {
                let (outer, n, inner) = axis_split(node.value.shape(), *axis);
                if let Some(gx) = buf!(*x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| (o * n + a) * inner + i;
                            let s: f64 = (0..n).map(|a| g[at(a)] * out[at(a)]).sum();
                            for a in 0..n {
                                gx[at(a)] += out[at(a)] * (g[at(a)] - s);
                            }
                        }
                    }
                }
            }
            Op::LogSoftmax(x, axis) => {
                let (outer, n, inner) = axis_split(node.value.shape(), *axis);
                if let Some(gx) = buf!(*x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |a: usize| (o * n + a) * inner + i;
                            let s: f64 = (0..n).map(|a| g[at(a)]).sum();
                            for a in 0..n {
                                gx[at(a)] += g[at(a)] - out[at(a)].exp() * s;
                            }
                        }
                    }
                }
            }
            Op::LogSumExp(x, axis) => {
                let vx = &nodes[x.idx].value;
                let (outer, n, inner) = axis_split(vx.shape(), *axis);
                let src = vx.data();
                if let Some(gx) = buf!(*x) {
                    for o in 0..outer {
                        for i in 0..inner {
                            let r = out[o * inner + i];
                            if r == f64::NEG_INFINITY {
                                continue;
                            }
                            let gi = g[o * inner + i];
                            for a in 0..n {
                                let at = (o * n + a) * inner + i;
                                gx[at] += gi * (src[at] - r).exp();
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = node.value.cols();
                let gvals = nodes[gain.idx].value.data();
                if let Some(gx) = buf!(*x) {
                    let mut dxhat = vec![0.0; d];
                    for (r, &is) in inv_std.iter().enumerate() {
                        let grow = &g[r * d..(r + 1) * d];
                        let hrow = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = grow[j] * gvals[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dh = dot(&dxhat, hrow) / d as f64;
                        for j in 0..d {
                            gx[r * d + j] += is * (dxhat[j] - mean_d - hrow[j] * mean_dh);
                        }
                    }
                }
                if let Some(gg) = buf!(*gain) {
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if let Some(gb) = buf!(*bias) {
                    for grow in g.chunks(d) {
                        axpy(gb, grow, 1.0);
                    }
                }
            }
            Op::Unfold(x, rf) => {
                let (t_len, c) = (nodes[x.idx].value.shape()[0], nodes[x.idx].value.shape()[1]);
                let half = rf / 2;
                if let Some(gx) = buf!(*x) {
                    for t in 0..t_len {
                        for j in 0..*rf {
                            let src = t as isize + j as isize - half as isize;
                            if src < 0 || src >= t_len as isize {
                                continue;
                            }
                            let s = src as usize;
                            let from = t * rf * c + j * c;
                            axpy(&mut gx[s * c..(s + 1) * c], &g[from..from + c], 1.0);
                        }
                    }
                }
            }
            Op::Dropout(x, mask) => {
                if let Some(gx) = buf!(*x) {
                    for ((o, &gi), &m) in gx.iter_mut().zip(g).zip(mask) {
                        *o += gi * m;
                    }
                }
            }
        }
    }
}

fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    let n = &nodes[v.idx];
    if !n.requires_grad {
        return None;
    }
    Some(grads[v.idx].get_or_insert_with(|| vec![0.0; n.value.len()]))
}

fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

fn removed_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != axis)
        .map(|(_, &d)| d)
        .collect()
}

fn matrix_dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::Shape(format!("{op} needs a matrix, got {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_selection() {
        let mut tape = Tape::new();
        let i2 = tape.constant(m(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let x = tape.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let y = tape.matmul(i2, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));

        let a = tape.constant(m(&[&[1.0, 0.0]]));
        let b = tape.constant(m(&[&[0.0], &[5.0]]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn softmax_uniform_and_saturated() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3], vec![0.0, 0.0, 0.0]).unwrap());
        let s = tape.softmax(x, 0).unwrap();
        for &v in tape.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = tape.constant(Tensor::new(vec![3], vec![1000.0, 0.0, 0.0]).unwrap());
        let s = tape.softmax(x, 0).unwrap();
        let v = tape.value(s).data();
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!(v[1] < 1e-12 && v[2] < 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2], vec![f64::NAN, 0.0]).unwrap());
        assert!(matches!(tape.softmax(x, 0), Err(Error::Numeric(_))));
    }

    #[test]
    fn backward_sum_and_square() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let s = tape.sum(w).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[1.0, 1.0]);

        let mut tape = Tape::new();
        let w = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let sq = tape.mul(w, w).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(3.0));
        let s = tape.sum(w).unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Tape(_))));
    }

    #[test]
    fn backward_needs_scalar_root() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(w), Err(Error::Tape(_))));
    }

    #[test]
    fn reset_makes_vars_stale() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(1.0));
        tape.reset();
        assert!(tape.is_empty());
        assert!(matches!(tape.sum(w), Err(Error::Tape(_))));
    }

    #[test]
    fn vars_from_another_tape_are_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let w = a.param(Tensor::scalar(1.0));
        let _ = b.param(Tensor::scalar(1.0));
        assert!(b.sum(w).is_err());
    }

    #[test]
    fn logsumexp_single_element_and_all_neg_inf() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![1, 1], vec![-3.5]).unwrap());
        let l = tape.logsumexp(x, 1).unwrap();
        assert_eq!(tape.value(l).data(), &[-3.5]);

        let y = tape.param(Tensor::new(vec![2], vec![f64::NEG_INFINITY; 2]).unwrap());
        let l = tape.logsumexp(y, 0).unwrap();
        assert_eq!(tape.value(l).item(), f64::NEG_INFINITY);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(y).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn gather_rows_scatters_one_contribution_per_occurrence() {
        let mut tape = Tape::new();
        let table = tape.param(Tensor::zeros(&[3, 2]));
        let rows = tape.gather_rows(table, &[2, 0, 2, 2]).unwrap();
        let s = tape.sum(rows).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(table).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 3.0, 3.0]);
    }

    #[test]
    fn unfold_pads_with_zeros() {
        let mut tape = Tape::new();
        let x = tape.constant(m(&[&[1.0], &[2.0], &[3.0]]));
        let u = tape.unfold_time(x, 3).unwrap();
        assert_eq!(tape.value(u).data(), &[0.0, 1.0, 2.0, 1.0, 2.0, 3.0, 2.0, 3.0, 0.0]);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(m(&[&[5.0, 5.0, 5.0, 5.0]]));
        let g = tape.constant(Tensor::filled(&[4], 1.0));
        let b = tape.constant(Tensor::zeros(&[4]));
        let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0; 4]);
    }

    #[test]
    fn inference_tape_records_no_grads() {
        let mut tape = Tape::inference();
        let w = tape.param(Tensor::scalar(2.0));
        assert!(!tape.requires_grad(w));
        let s = tape.sum(w).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(w).is_none());
    }
}
