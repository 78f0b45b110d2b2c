//! Define-by-run reverse-mode autodiff.
//!
//! A [`Tape`] records one forward computation as a flat list of nodes; node
//! ids are handed out in construction order, so the list is already a
//! topological order and [`Tape::backward`] is a single reverse sweep. Tapes
//! are cheap and meant to be rebuilt for every forward pass; parameters live
//! outside the tape as plain [`Tensor`]s and are registered as leaves with
//! [`Tape::input`].

use crate::ops;
use crate::{Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Value(usize);

enum Op {
    /// Leaf (parameter or constant input).
    Input,
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Minimum(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    GatherRows { table: usize, ids: Vec<usize> },
    SelectCols { mat: usize, ids: Vec<usize> },
    Softmax(usize),
    LogSoftmax(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, means: Vec<f64>, rstds: Vec<f64> },
    Gelu(usize),
    Exp(usize),
    Clamp { x: usize, lo: f64, hi: f64 },
    ConcatCols(Vec<usize>),
    SliceCols { x: usize, start: usize },
    SliceRows { x: usize, start: usize },
    ReduceSum(usize),
    ReduceMean(usize),
    Scale { x: usize, c: f64 },
    AddScalar(usize),
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

/// Gradients of one scalar loss with respect to tape nodes.
///
/// Only nodes on a path from a `requires_grad` leaf to the loss carry a
/// gradient; everything else returns `None`.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to the given node, if one was computed.
    pub fn wrt(&self, v: Value) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// A recorded forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The forward value of a node.
    pub fn value(&self, v: Value) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Value {
        self.nodes.push(Node { value, needs_grad, op });
        Value(self.nodes.len() - 1)
    }

    fn needs(&self, v: Value) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Registers a leaf. The tensor's `requires_grad` flag decides whether a
    /// gradient will be available for it after [`Tape::backward`].
    pub fn input(&mut self, t: &Tensor) -> Value {
        let needs = t.requires_grad;
        self.push(t.clone(), needs, Op::Input)
    }

    /// Registers a leaf that never receives a gradient, regardless of the
    /// tensor's flag.
    pub fn constant(&mut self, t: &Tensor) -> Value {
        self.push(t.clone(), false, Op::Input)
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value, TensorError> {
        let v = ops::add(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, needs, Op::Add(a.0, b.0)))
    }

    /// Adds a 1-D bias row to every row of a matrix.
    pub fn add_row(&mut self, a: Value, row: Value) -> Result<Value, TensorError> {
        let v = ops::add_row(self.value(a), self.value(row))?;
        let needs = self.needs(a) || self.needs(row);
        Ok(self.push(v, needs, Op::AddRow(a.0, row.0)))
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value, TensorError> {
        let v = ops::sub(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, needs, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value, TensorError> {
        let v = ops::mul(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, needs, Op::Mul(a.0, b.0)))
    }

    /// Elementwise minimum; at ties the gradient is routed to the first input.
    pub fn minimum(&mut self, a: Value, b: Value) -> Result<Value, TensorError> {
        let v = ops::minimum(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, needs, Op::Minimum(a.0, b.0)))
    }

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value, TensorError> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, needs, Op::MatMul(a.0, b.0)))
    }

    pub fn transpose(&mut self, a: Value) -> Result<Value, TensorError> {
        let v = ops::transpose(self.value(a))?;
        let needs = self.needs(a);
        Ok(self.push(v, needs, Op::Transpose(a.0)))
    }

    pub fn gather_rows(&mut self, table: Value, ids: &[usize]) -> Result<Value, TensorError> {
        let v = ops::gather_rows(self.value(table), ids)?;
        let needs = self.needs(table);
        Ok(self.push(v, needs, Op::GatherRows { table: table.0, ids: ids.to_vec() }))
    }

    pub fn select_cols(&mut self, mat: Value, ids: &[usize]) -> Result<Value, TensorError> {
        let v = ops::select_cols(self.value(mat), ids)?;
        let needs = self.needs(mat);
        Ok(self.push(v, needs, Op::SelectCols { mat: mat.0, ids: ids.to_vec() }))
    }

    pub fn softmax(&mut self, a: Value) -> Result<Value, TensorError> {
        let v = ops::softmax(self.value(a))?;
        let needs = self.needs(a);
        Ok(self.push(v, needs, Op::Softmax(a.0)))
    }

    pub fn log_softmax(&mut self, a: Value) -> Result<Value, TensorError> {
        let v = ops::log_softmax(self.value(a))?;
        let needs = self.needs(a);
        Ok(self.push(v, needs, Op::LogSoftmax(a.0)))
    }

    pub fn layer_norm(
        &mut self,
        x: Value,
        gamma: Value,
        beta: Value,
    ) -> Result<Value, TensorError> {
        let (v, means, rstds) =
            ops::layer_norm_full(self.value(x), self.value(gamma), self.value(beta))?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            v,
            needs,
            Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, means, rstds },
        ))
    }

    pub fn gelu(&mut self, a: Value) -> Result<Value, TensorError> {
        let v = ops::gelu(self.value(a))?;
        let needs = self.needs(a);
        Ok(self.push(v, needs, Op::Gelu(a.0)))
    }

    pub fn exp(&mut self, a: Value) -> Result<Value, TensorError> {
        let v = ops::exp(self.value(a))?;
        let needs = self.needs(a);
        Ok(self.push(v, needs, Op::Exp(a.0)))
    }

    /// Clamp into `[lo, hi]`; gradient passes only strictly inside the band.
    pub fn clamp(&mut self, a: Value, lo: f64, hi: f64) -> Result<Value, TensorError> {
        let v = ops::clamp(self.value(a), lo, hi)?;
        let needs = self.needs(a);
        Ok(self.push(v, needs, Op::Clamp { x: a.0, lo, hi }))
    }

    pub fn concat_cols(&mut self, parts: &[Value]) -> Result<Value, TensorError> {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let v = ops::concat_cols(&tensors)?;
        let needs = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(v, needs, Op::ConcatCols(parts.iter().map(|p| p.0).collect())))
    }

    pub fn slice_cols(&mut self, a: Value, start: usize, len: usize) -> Result<Value, TensorError> {
        let v = ops::slice_cols(self.value(a), start, len)?;
        let needs = self.needs(a);
        Ok(self.push(v, needs, Op::SliceCols { x: a.0, start }))
    }

    pub fn slice_rows(&mut self, a: Value, start: usize, len: usize) -> Result<Value, TensorError> {
        let v = ops::slice_rows(self.value(a), start, len)?;
        let needs = self.needs(a);
        Ok(self.push(v, needs, Op::SliceRows { x: a.0, start }))
    }

    pub fn reduce_sum(&mut self, a: Value) -> Result<Value, TensorError> {
        let v = ops::reduce_sum(self.value(a))?;
        let needs = self.needs(a);
        Ok(self.push(v, needs, Op::ReduceSum(a.0)))
    }

    pub fn reduce_mean(&mut self, a: Value) -> Result<Value, TensorError> {
        let v = ops::reduce_mean(self.value(a))?;
        let needs = self.needs(a);
        Ok(self.push(v, needs, Op::ReduceMean(a.0)))
    }

    pub fn scale(&mut self, a: Value, c: f64) -> Result<Value, TensorError> {
        let v = ops::scale(self.value(a), c)?;
        let needs = self.needs(a);
        Ok(self.push(v, needs, Op::Scale { x: a.0, c }))
    }

    pub fn add_scalar(&mut self, a: Value, c: f64) -> Result<Value, TensorError> {
        let v = ops::add_scalar(self.value(a), c)?;
        let needs = self.needs(a);
        Ok(self.push(v, needs, Op::AddScalar(a.0)))
    }

    pub fn neg(&mut self, a: Value) -> Result<Value, TensorError> {
        self.scale(a, -1.0)
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every node on
    /// a differentiable path; inputs registered via [`Tape::constant`] and
    /// tensors without `requires_grad` are pruned.
    pub fn backward(&self, loss: Value) -> Result<Gradients, TensorError> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.len() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: loss_node.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(dout) = grads[id].take() else { continue };
            self.accumulate(id, &dout, &mut grads);
            grads[id] = Some(dout);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                g.map(|data| {
                    Tensor::from_vec(self.nodes[id].value.shape(), data)
                        .expect("gradient shape matches node shape")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    /// Adds this node's contribution to its inputs' gradient buffers.
    fn accumulate(&self, id: usize, dout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let mut add_to = |target: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[target].needs_grad {
                return;
            }
            let buf = grads[target]
                .get_or_insert_with(|| vec![0.0; self.nodes[target].value.len()]);
            f(buf);
        };

        match &node.op {
            Op::Input => {}
            Op::Add(a, b) => {
                add_to(*a, &mut |g| {
                    for (gi, &d) in g.iter_mut().zip(dout) {
                        *gi += d;
                    }
                });
                add_to(*b, &mut |g| {
                    for (gi, &d) in g.iter_mut().zip(dout) {
                        *gi += d;
                    }
                });
            }
            Op::AddRow(a, row) => {
                add_to(*a, &mut |g| {
                    for (gi, &d) in g.iter_mut().zip(dout) {
                        *gi += d;
                    }
                });
                let m = self.nodes[*row].value.len();
                add_to(*row, &mut |g| {
                    for (i, &d) in dout.iter().enumerate() {
                        g[i % m] += d;
                    }
                });
            }
            Op::Sub(a, b) => {
                add_to(*a, &mut |g| {
                    for (gi, &d) in g.iter_mut().zip(dout) {
                        *gi += d;
                    }
                });
                add_to(*b, &mut |g| {
                    for (gi, &d) in g.iter_mut().zip(dout) {
                        *gi -= d;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                add_to(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] * bv[i];
                    }
                });
                add_to(*b, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] * av[i];
                    }
                });
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                add_to(*a, &mut |g| {
                    for i in 0..g.len() {
                        if av[i] <= bv[i] {
                            g[i] += dout[i];
                        }
                    }
                });
                add_to(*b, &mut |g| {
                    for i in 0..g.len() {
                        if bv[i] < av[i] {
                            g[i] += dout[i];
                        }
                    }
                });
            }
            Op::MatMul(a, b) => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                add_to(*a, &mut |g| {
                    // dA = dC . B^T
                    let bd = bv.data();
                    for i in 0..n {
                        for kk in 0..k {
                            let mut s = 0.0;
                            for j in 0..m {
                                s += dout[i * m + j] * bd[kk * m + j];
                            }
                            g[i * k + kk] += s;
                        }
                    }
                });
                add_to(*b, &mut |g| {
                    // dB = A^T . dC
                    let ad = av.data();
                    for kk in 0..k {
                        for i in 0..n {
                            let aik = ad[i * k + kk];
                            if aik == 0.0 {
                                continue;
                            }
                            for j in 0..m {
                                g[kk * m + j] += aik * dout[i * m + j];
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = (node.value.rows(), node.value.cols());
                add_to(*a, &mut |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[j * m + i] += dout[i * n + j];
                        }
                    }
                });
            }
            Op::GatherRows { table, ids } => {
                let d = node.value.cols();
                add_to(*table, &mut |g| {
                    for (i, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            g[id * d + j] += dout[i * d + j];
                        }
                    }
                });
            }
            Op::SelectCols { mat, ids } => {
                let m = self.nodes[*mat].value.cols();
                add_to(*mat, &mut |g| {
                    for (i, &id) in ids.iter().enumerate() {
                        g[i * m + id] += dout[i];
                    }
                });
            }
            Op::Softmax(a) => {
                let s = node.value.data();
                let m = node.value.cols();
                add_to(*a, &mut |g| {
                    for r in 0..node.value.rows() {
                        let row = &s[r * m..(r + 1) * m];
                        let drow = &dout[r * m..(r + 1) * m];
                        let dot: f64 = row.iter().zip(drow).map(|(&p, &d)| p * d).sum();
                        for j in 0..m {
                            g[r * m + j] += row[j] * (drow[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let ls = node.value.data();
                let m = node.value.cols();
                add_to(*a, &mut |g| {
                    for r in 0..node.value.rows() {
                        let drow = &dout[r * m..(r + 1) * m];
                        let dsum: f64 = drow.iter().sum();
                        for j in 0..m {
                            g[r * m + j] += drow[j] - ls[r * m + j].exp() * dsum;
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, means, rstds } => {
                let xv = self.nodes[*x].value.data();
                let gv = self.nodes[*gamma].value.data();
                let (n, m) = (node.value.rows(), node.value.cols());
                add_to(*beta, &mut |g| {
                    for r in 0..n {
                        for j in 0..m {
                            g[j] += dout[r * m + j];
                        }
                    }
                });
                add_to(*gamma, &mut |g| {
                    for r in 0..n {
                        for j in 0..m {
                            let xhat = (xv[r * m + j] - means[r]) * rstds[r];
                            g[j] += dout[r * m + j] * xhat;
                        }
                    }
                });
                add_to(*x, &mut |g| {
                    for r in 0..n {
                        let mut mean_dyg = 0.0;
                        let mut mean_dyg_xhat = 0.0;
                        for j in 0..m {
                            let xhat = (xv[r * m + j] - means[r]) * rstds[r];
                            let dyg = dout[r * m + j] * gv[j];
                            mean_dyg += dyg;
                            mean_dyg_xhat += dyg * xhat;
                        }
                        mean_dyg /= m as f64;
                        mean_dyg_xhat /= m as f64;
                        for j in 0..m {
                            let xhat = (xv[r * m + j] - means[r]) * rstds[r];
                            let dyg = dout[r * m + j] * gv[j];
                            g[r * m + j] += rstds[r] * (dyg - mean_dyg - xhat * mean_dyg_xhat);
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let xv = self.nodes[*a].value.data();
                add_to(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] * ops::gelu_derivative(xv[i]);
                    }
                });
            }
            Op::Exp(a) => {
                let out = node.value.data();
                add_to(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] * out[i];
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.nodes[*x].value.data();
                let (lo, hi) = (*lo, *hi);
                add_to(*x, &mut |g| {
                    for i in 0..g.len() {
                        if xv[i] > lo && xv[i] < hi {
                            g[i] += dout[i];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let n = node.value.rows();
                let m_total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let m = self.nodes[p].value.cols();
                    let start = offset;
                    add_to(p, &mut |g| {
                        for i in 0..n {
                            for j in 0..m {
                                g[i * m + j] += dout[i * m_total + start + j];
                            }
                        }
                    });
                    offset += m;
                }
            }
            Op::SliceCols { x, start } => {
                let m_in = self.nodes[*x].value.cols();
                let (n, len) = (node.value.rows(), node.value.cols());
                let start = *start;
                add_to(*x, &mut |g| {
                    for i in 0..n {
                        for j in 0..len {
                            g[i * m_in + start + j] += dout[i * len + j];
                        }
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let m = node.value.cols();
                let len = node.value.rows();
                let start = *start;
                add_to(*x, &mut |g| {
                    for i in 0..len {
                        for j in 0..m {
                            g[(start + i) * m + j] += dout[i * m + j];
                        }
                    }
                });
            }
            Op::ReduceSum(a) => {
                add_to(*a, &mut |g| {
                    for gi in g.iter_mut() {
                        *gi += dout[0];
                    }
                });
            }
            Op::ReduceMean(a) => {
                let n = self.nodes[*a].value.len() as f64;
                add_to(*a, &mut |g| {
                    for gi in g.iter_mut() {
                        *gi += dout[0] / n;
                    }
                });
            }
            Op::Scale { x, c } => {
                let c = *c;
                add_to(*x, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += dout[i] * c;
                    }
                });
            }
            Op::AddScalar(a) => {
                add_to(*a, &mut |g| {
                    for (gi, &d) in g.iter_mut().zip(dout) {
                        *gi += d;
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap().with_grad()
    }

    #[test]
    fn mul_sum_backward_hand_case() {
        // L = sum(a * b); dL/da = b, dL/db = a.
        let a = param(&[3], &[1.0, 2.0, 3.0]);
        let b = param(&[3], &[4.0, 5.0, 6.0]);
        let mut tape = Tape::new();
        let va = tape.input(&a);
        let vb = tape.input(&b);
        let prod = tape.mul(va, vb).unwrap();
        let loss = tape.reduce_sum(prod).unwrap();
        assert_eq!(tape.value(loss).item().unwrap(), 32.0);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(va).unwrap().data(), b.data());
        assert_eq!(grads.wrt(vb).unwrap().data(), a.data());
    }

    #[test]
    fn matmul_backward_hand_case() {
        // L = sum(A.B) with A=[[1,2]], B=[[3],[4]] -> L=11, dA=[[3,4]], dB=[[1],[2]].
        let a = param(&[1, 2], &[1.0, 2.0]);
        let b = param(&[2, 1], &[3.0, 4.0]);
        let mut tape = Tape::new();
        let va = tape.input(&a);
        let vb = tape.input(&b);
        let c = tape.matmul(va, vb).unwrap();
        let loss = tape.reduce_sum(c).unwrap();
        assert_eq!(tape.value(loss).item().unwrap(), 11.0);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(va).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(grads.wrt(vb).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn constants_and_no_grad_leaves_are_pruned() {
        let a = param(&[2], &[1.0, 2.0]);
        let c = Tensor::from_vec(&[2], vec![5.0, 7.0]).unwrap();
        let mut tape = Tape::new();
        let va = tape.input(&a);
        let vc = tape.input(&c); // requires_grad = false
        let s = tape.mul(va, vc).unwrap();
        let loss = tape.reduce_sum(s).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt(vc).is_none());
        assert_eq!(grads.wrt(va).unwrap().data(), &[5.0, 7.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let a = param(&[2], &[1.0, 2.0]);
        let mut tape = Tape::new();
        let va = tape.input(&a);
        assert!(matches!(
            tape.backward(va),
            Err(TensorError::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn gather_rows_accumulates_repeated_ids() {
        let table = param(&[3, 2], &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0]);
        let mut tape = Tape::new();
        let vt = tape.input(&table);
        let g = tape.gather_rows(vt, &[1, 1, 2]).unwrap();
        let loss = tape.reduce_sum(g).unwrap();
        let grads = tape.backward(loss).unwrap();
        // Row 1 was gathered twice, so its gradient is 2 in each column.
        assert_eq!(grads.wrt(vt).unwrap().data(), &[0.0, 0.0, 2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn node_ids_are_topologically_ordered() {
        let a = param(&[1], &[2.0]);
        let mut tape = Tape::new();
        let va = tape.input(&a);
        let b = tape.scale(va, 3.0).unwrap();
        let c = tape.add(va, b).unwrap();
        assert!(va.0 < b.0 && b.0 < c.0);
    }

    #[test]
    fn minimum_routes_gradient_to_smaller_side() {
        let a = param(&[2], &[1.0, 5.0]);
        let b = param(&[2], &[3.0, 2.0]);
        let mut tape = Tape::new();
        let va = tape.input(&a);
        let vb = tape.input(&b);
        let m = tape.minimum(va, vb).unwrap();
        let loss = tape.reduce_sum(m).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(va).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(grads.wrt(vb).unwrap().data(), &[0.0, 1.0]);
    }
}
