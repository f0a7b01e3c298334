//! Tape-based reverse-mode differentiation.
//!
//! Ops are appended to the tape as they execute, so every op's inputs precede
//! it. [`Graph::backward`] walks the tape once in reverse and never touches the
//! stored forward values.

use std::collections::HashMap;

use super::ops::{self, dot, gemm_nn, gemm_nt, gemm_tn};
use super::{Mask, NumericsError, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<f64>,
        count: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    SumAll(Var),
    SumSquares(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// One training-step computation graph.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
    check_finite: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Finite-value checks follow `debug_assertions`; see [`Graph::with_finite_checks`].
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
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

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var, NumericsError> {
        if self.check_finite && !value.is_finite() {
            return Err(NumericsError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a leaf. Gradients are only produced for leaves with `requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: needs,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    /// Leaf keyed by a caller-side parameter id; repeated calls reuse one node.
    pub fn param(&mut self, key: usize, t: &Tensor, trainable: bool) -> Var {
        if let Some(v) = self.params.get(&key) {
            return *v;
        }
        let v = self.leaf(t.clone().with_requires_grad(trainable));
        self.params.insert(key, v);
        v
    }

    fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> NumericsError {
        NumericsError::ShapeMismatch {
            op,
            left: a.to_vec(),
            right: b.to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        self.push("matmul", out, Op::MatMul(a, b), needs)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = ops::matmul_nt(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        self.push("matmul_nt", out, Op::MatMulNt(a, b), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Self::mismatch("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = ta.with_data(data).with_requires_grad(false);
        let needs = self.needs(a) || self.needs(b);
        self.push("add", out, Op::Add(a, b), needs)
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NumericsError> {
        let (tx, tr) = (self.value(x), self.value(row));
        let n = tx.cols();
        if tr.len() != n {
            return Err(Self::mismatch("add_row", tx.shape(), tr.shape()));
        }
        let r = tr.data();
        let data = tx
            .data()
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(a, b)| a + b))
            .collect();
        let out = tx.with_data(data).with_requires_grad(false);
        let needs = self.needs(x) || self.needs(row);
        self.push("add_row", out, Op::AddRow(x, row), needs)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var, NumericsError> {
        let tx = self.value(x);
        let out = tx.with_data(tx.data().iter().map(|v| v * s).collect()).with_requires_grad(false);
        let needs = self.needs(x);
        self.push("scale", out, Op::Scale(x, s), needs)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var, NumericsError> {
        let tx = self.value(x);
        let out = tx
            .with_data(tx.data().iter().map(|&v| gelu(v)).collect())
            .with_requires_grad(false);
        let needs = self.needs(x);
        self.push("gelu", out, Op::Gelu(x), needs)
    }

    pub fn softmax_rows(&mut self, x: Var, mask: Option<&Mask>) -> Result<Var, NumericsError> {
        let out = ops::softmax_rows(self.value(x), mask)?;
        let needs = self.needs(x);
        self.push("softmax_rows", out, Op::Softmax(x), needs)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumericsError> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.cols();
        if tg.len() != d || tb.len() != d {
            return Err(Self::mismatch("layer_norm", tx.shape(), tg.shape()));
        }
        let rows = tx.rows();
        let (xhat, rstd) = ops::layer_norm_stats(tx.data(), rows, d);
        let (g, b) = (tg.data(), tb.data());
        let mut y = xhat.clone();
        for i in 0..rows {
            for j in 0..d {
                y[i * d + j] = y[i * d + j] * g[j] + b[j];
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), y)?;
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            needs,
        )
    }

    /// Mean token NLL over `loss_mask` positions; returns a scalar node.
    pub fn masked_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        loss_mask: &[bool],
    ) -> Result<Var, NumericsError> {
        let tl = self.value(logits);
        let loss = ops::masked_cross_entropy(tl, targets, loss_mask)?;
        let (t, v) = (tl.rows(), tl.cols());
        let mut probs = vec![0.0; t * v];
        for i in 0..t {
            if loss_mask[i] {
                let out = &mut probs[i * v..(i + 1) * v];
                ops::log_softmax_row(tl.row(i), out);
                for p in out.iter_mut() {
                    *p = p.exp();
                }
            }
        }
        let count = loss_mask.iter().filter(|m| **m).count();
        let needs = self.needs(logits);
        self.push(
            "masked_cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: loss_mask.to_vec(),
                probs,
                count,
            },
            needs,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            if t.cols() != cols {
                return Err(Self::mismatch("concat_rows", &[rows, cols], t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        self.push(
            "concat_rows",
            Tensor::matrix(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
            needs,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows {
                return Err(Self::mismatch("concat_cols", &[rows, total], t.shape()));
            }
            total += t.cols();
        }
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for p in parts {
            let t = self.value(*p);
            let c = t.cols();
            for i in 0..rows {
                data[i * total + off..i * total + off + c].copy_from_slice(t.row(i));
            }
            off += c;
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        self.push(
            "concat_cols",
            Tensor::matrix(rows, total, data),
            Op::ConcatCols(parts.to_vec()),
            needs,
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let t = self.value(x);
        if start > end || end > t.rows() {
            return Err(Self::mismatch("slice_rows", t.shape(), &[start, end]));
        }
        let c = t.cols();
        let out = Tensor::matrix(end - start, c, t.data()[start * c..end * c].to_vec());
        let needs = self.needs(x);
        self.push("slice_rows", out, Op::SliceRows(x, start), needs)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        if start > end || end > c {
            return Err(Self::mismatch("slice_cols", t.shape(), &[start, end]));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&t.row(i)[start..end]);
        }
        let needs = self.needs(x);
        self.push("slice_cols", Tensor::matrix(r, w, data), Op::SliceCols(x, start), needs)
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(table);
        let (n, c) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= n {
                return Err(Self::mismatch("gather_rows", t.shape(), &[id]));
            }
            data.extend_from_slice(t.row(id));
        }
        let needs = self.needs(table);
        self.push(
            "gather_rows",
            Tensor::matrix(ids.len(), c, data),
            Op::Gather(table, ids.to_vec()),
            needs,
        )
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var, NumericsError> {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(x), needs)
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var, NumericsError> {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        let needs = self.needs(x);
        self.push("sum_squares", Tensor::scalar(s), Op::SumSquares(x), needs)
    }

    /// Reverse pass from a scalar node. Forward values are left untouched.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::NotScalar {
                shape: self.shape(loss).to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.backprop_node(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Ok(Gradients {
            grads,
            params: self.params.iter().map(|(k, v)| (*k, *v)).collect(),
        })
    }

    fn backprop_node(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let len_of = |v: Var| self.nodes[v.0].value.len();
        let acc = |v: Var, grads: &mut [Option<Vec<f64>>]| -> Option<usize> {
            if self.nodes[v.0].needs_grad {
                if grads[v.0].is_none() {
                    grads[v.0] = Some(vec![0.0; len_of(v)]);
                }
                Some(v.0)
            } else {
                None
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if let Some(i) = acc(*a, grads) {
                    gemm_nt(dy, tb.data(), grads[i].as_mut().unwrap(), m, n, k);
                }
                if let Some(i) = acc(*b, grads) {
                    gemm_tn(ta.data(), dy, grads[i].as_mut().unwrap(), m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                // C = A·Bᵀ, A: m×k, B: n×k
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
                if let Some(i) = acc(*a, grads) {
                    gemm_nn(dy, tb.data(), grads[i].as_mut().unwrap(), m, n, k);
                }
                if let Some(i) = acc(*b, grads) {
                    gemm_tn(dy, ta.data(), grads[i].as_mut().unwrap(), m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(i) = acc(*v, grads) {
                        add_into(grads[i].as_mut().unwrap(), dy);
                    }
                }
            }
            Op::AddRow(x, row) => {
                if let Some(i) = acc(*x, grads) {
                    add_into(grads[i].as_mut().unwrap(), dy);
                }
                if let Some(i) = acc(*row, grads) {
                    let g = grads[i].as_mut().unwrap();
                    let n = g.len();
                    for chunk in dy.chunks(n) {
                        add_into(g, chunk);
                    }
                }
            }
            Op::Scale(x, s) => {
                if let Some(i) = acc(*x, grads) {
                    for (g, d) in grads[i].as_mut().unwrap().iter_mut().zip(dy) {
                        *g += s * d;
                    }
                }
            }
            Op::Gelu(x) => {
                if let Some(i) = acc(*x, grads) {
                    let xs = self.value(*x).data();
                    for ((g, d), &v) in grads[i].as_mut().unwrap().iter_mut().zip(dy).zip(xs) {
                        *g += d * gelu_grad(v);
                    }
                }
            }
            Op::Softmax(x) => {
                if let Some(i) = acc(*x, grads) {
                    let y = node.value.data();
                    let n = node.value.cols();
                    let g = grads[i].as_mut().unwrap();
                    for r in 0..node.value.rows() {
                        let yr = &y[r * n..(r + 1) * n];
                        let dr = &dy[r * n..(r + 1) * n];
                        let inner = dot(yr, dr);
                        for j in 0..n {
                            g[r * n + j] += yr[j] * (dr[j] - inner);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = node.value.cols();
                let rows = node.value.rows();
                if let Some(i) = acc(*gain, grads) {
                    let g = grads[i].as_mut().unwrap();
                    for r in 0..rows {
                        for j in 0..d {
                            g[j] += dy[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(i) = acc(*bias, grads) {
                    let g = grads[i].as_mut().unwrap();
                    for chunk in dy.chunks(d) {
                        add_into(g, chunk);
                    }
                }
                if let Some(i) = acc(*x, grads) {
                    let gain_v = self.value(*gain).data();
                    let g = grads[i].as_mut().unwrap();
                    let mut dxhat = vec![0.0; d];
                    for r in 0..rows {
                        let xh = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = dy[r * d + j] * gain_v[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx = dot(&dxhat, xh) / d as f64;
                        for j in 0..d {
                            g[r * d + j] += rstd[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                mask,
                probs,
                count,
            } => {
                if let Some(i) = acc(*logits, grads) {
                    let v = self.value(*logits).cols();
                    let scale = dy[0] / *count as f64;
                    let g = grads[i].as_mut().unwrap();
                    for (r, keep) in mask.iter().enumerate() {
                        if !keep {
                            continue;
                        }
                        for j in 0..v {
                            let onehot = if j == targets[r] { 1.0 } else { 0.0 };
                            g[r * v + j] += scale * (probs[r * v + j] - onehot);
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = len_of(*p);
                    if let Some(i) = acc(*p, grads) {
                        add_into(grads[i].as_mut().unwrap(), &dy[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut off = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    if let Some(i) = acc(*p, grads) {
                        let g = grads[i].as_mut().unwrap();
                        for r in 0..rows {
                            add_into(
                                &mut g[r * c..(r + 1) * c],
                                &dy[r * total + off..r * total + off + c],
                            );
                        }
                    }
                    off += c;
                }
            }
            Op::SliceRows(x, start) => {
                if let Some(i) = acc(*x, grads) {
                    let c = node.value.cols();
                    let g = grads[i].as_mut().unwrap();
                    add_into(&mut g[start * c..start * c + dy.len()], dy);
                }
            }
            Op::SliceCols(x, start) => {
                if let Some(i) = acc(*x, grads) {
                    let c = self.value(*x).cols();
                    let w = node.value.cols();
                    let g = grads[i].as_mut().unwrap();
                    for r in 0..node.value.rows() {
                        add_into(
                            &mut g[r * c + start..r * c + start + w],
                            &dy[r * w..(r + 1) * w],
                        );
                    }
                }
            }
            Op::Gather(table, ids) => {
                if let Some(i) = acc(*table, grads) {
                    let c = node.value.cols();
                    let g = grads[i].as_mut().unwrap();
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut g[id * c..(id + 1) * c], &dy[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(i) = acc(*x, grads) {
                    for g in grads[i].as_mut().unwrap().iter_mut() {
                        *g += dy[0];
                    }
                }
            }
            Op::SumSquares(x) => {
                if let Some(i) = acc(*x, grads) {
                    let xs = self.value(*x).data();
                    for (g, v) in grads[i].as_mut().unwrap().iter_mut().zip(xs) {
                        *g += 2.0 * v * dy[0];
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Result of [`Graph::backward`]: per-node gradients.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// `(key, gradient)` for every keyed parameter that received a gradient.
    pub fn params(&self) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        self.params
            .iter()
            .filter_map(|(k, v)| self.wrt(*v).map(|g| (*k, g)))
    }

    /// Shared handle to a gradient as a tensor shaped like `like`.
    pub fn tensor(&self, v: Var, like: &Tensor) -> Option<Tensor> {
        self.wrt(v).map(|g| like.with_data(g.to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_leaves_forward_values_unchanged() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).with_requires_grad(true));
        let b = g.leaf(Tensor::matrix(2, 2, vec![0.5, -1.0, 0.25, 2.0]).with_requires_grad(true));
        let c = g.matmul(a, b).unwrap();
        let s = g.softmax_rows(c, None).unwrap();
        let l = g.sum_squares(s).unwrap();
        let before: Vec<Tensor> = (0..g.len()).map(|i| g.value(Var(i)).clone()).collect();
        g.backward(l).unwrap();
        g.backward(l).unwrap();
        for (i, t) in before.iter().enumerate() {
            assert_eq!(t, g.value(Var(i)));
        }
    }

    #[test]
    fn matmul_backward_matches_closed_form() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).with_requires_grad(true));
        let b = g.leaf(Tensor::matrix(2, 1, vec![3.0, 4.0]).with_requires_grad(true));
        let c = g.matmul(a, b).unwrap();
        let l = g.sum_all(c).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(a).unwrap(), &[3.0, 4.0]);
        assert_eq!(grads.wrt(b).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]));
        let b = g.leaf(Tensor::matrix(2, 1, vec![3.0, 4.0]).with_requires_grad(true));
        let c = g.matmul(a, b).unwrap();
        let l = g.sum_all(c).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.wrt(a).is_none());
        assert!(grads.wrt(b).is_some());
    }

    #[test]
    fn keyed_params_are_deduplicated() {
        let mut g = Graph::new();
        let t = Tensor::vector(vec![1.0, 2.0]);
        let p1 = g.param(7, &t, true);
        let p2 = g.param(7, &t, true);
        assert_eq!(p1, p2);
        let s = g.add(p1, p2).unwrap();
        let l = g.sum_all(s).unwrap();
        let grads = g.backward(l).unwrap();
        let collected: Vec<_> = grads.params().collect();
        assert_eq!(collected.len(), 1);
        assert_eq!(collected[0].1, &[2.0, 2.0]);
    }

    #[test]
    fn non_finite_values_are_reported_when_checking() {
        let mut g = Graph::new().with_finite_checks(true);
        let a = g.constant(Tensor::vector(vec![f64::MAX, 1.0]));
        let err = g.scale(a, 10.0).unwrap_err();
        assert!(matches!(err, NumericsError::NonFinite { op: "scale" }));

        let mut g = Graph::new().with_finite_checks(false);
        let a = g.constant(Tensor::vector(vec![f64::MAX, 1.0]));
        assert!(g.scale(a, 10.0).is_ok());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![1.0, 2.0]).with_requires_grad(true));
        assert!(matches!(g.backward(a), Err(NumericsError::NotScalar { .. })));
    }
}
