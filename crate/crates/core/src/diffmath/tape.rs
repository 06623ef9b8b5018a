use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param { store: u64, id: ParamId },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Tanh(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LogSumExp(Var, usize),
    SumAxis(Var, usize),
    Sum(Var),
    Mean(Var),
    SegmentSum(Var, Rc<[usize]>),
    SegmentLogSumExp(Var, Rc<[usize]>),
    SegmentLogSoftmax(Var, Rc<[usize]>),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    SelectRows(Var, Rc<[usize]>),
    Transpose(Var),
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    grad: bool,
}

/// Records a computation for one reverse pass.
///
/// Values are computed eagerly. Nodes that depend on no parameter are
/// treated as constants and skipped by `backward`.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every recorded node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn lane_index(cols: usize, axis: usize) -> impl Fn(usize, usize) -> usize {
    move |lane, i| {
        if axis == 1 {
            lane * cols + i
        } else {
            i * cols + lane
        }
    }
}

fn lanes(t: &Tensor, axis: usize) -> (usize, usize) {
    if axis == 1 {
        (t.rows(), t.cols())
    } else {
        (t.cols(), t.rows())
    }
}

fn check_axis(axis: usize) -> Result<()> {
    if axis > 1 {
        return Err(Error::Domain(format!("axis {axis} outside 0..=1")));
    }
    Ok(())
}

/// Row-wise (axis 1) or column-wise (axis 0) max-shifted log-sum-exp.
fn logsumexp_lanes(x: &Tensor, axis: usize) -> Vec<f64> {
    let (n_lanes, len) = lanes(x, axis);
    let idx = lane_index(x.cols(), axis);
    let d = x.data();
    (0..n_lanes)
        .map(|l| {
            let m = (0..len).map(|i| d[idx(l, i)]).fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                return m;
            }
            m + (0..len).map(|i| (d[idx(l, i)] - m).exp()).sum::<f64>().ln()
        })
        .collect()
}

fn segment_lse(x: &Tensor, offsets: &[usize]) -> Vec<f64> {
    let c = x.cols();
    let d = x.data();
    let mut out = Vec::with_capacity((offsets.len() - 1) * c);
    for w in offsets.windows(2) {
        for col in 0..c {
            let m = (w[0]..w[1]).map(|r| d[r * c + col]).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = (w[0]..w[1]).map(|r| (d[r * c + col] - m).exp()).sum();
            out.push(m + s.ln());
        }
    }
    out
}

/// Output shape of a broadcasting binary op.
fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<[usize; 2]> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a.rows(), b.rows()), dim(a.cols(), b.cols())) {
        (Some(r), Some(c)) => Ok([r, c]),
        _ => Err(Error::shape(op, &a.shape(), &b.shape())),
    }
}

fn broadcast_to(t: &Tensor, shape: [usize; 2]) -> Tensor {
    if t.shape() == shape {
        return t.clone();
    }
    let [r, c] = shape;
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            data.push(t.get(if t.rows() == 1 { 0 } else { i }, if t.cols() == 1 { 0 } else { j }));
        }
    }
    Tensor::new(r, c, data).expect("broadcast shape")
}

/// Sums `g` down to `shape`, undoing a broadcast.
fn reduce_to(g: &Tensor, shape: [usize; 2]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape[0], shape[1]);
    let (rs, cs) = (shape[0] == 1, shape[1] == 1);
    let oc = shape[1];
    let d = out.data_mut();
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let r = if rs { 0 } else { i };
            let c = if cs { 0 } else { j };
            d[r * oc + c] += g.get(i, j);
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    fn push(&mut self, value: Tensor, op: Op, grad: bool) -> Var {
        self.nodes.push(Node { value, op, grad });
        Var(self.nodes.len() - 1)
    }

    fn g(&self, v: Var) -> bool {
        self.nodes[v.0].grad
    }

    /// A constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable parameter read from `store`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param { store: store.key(), id }, true)
    }

    /// Same value, cut from the gradient graph.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.constant(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let grad = self.g(a) || self.g(b);
        Ok(self.push(value, Op::MatMul(a, b), grad))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(op, ta, tb)?;
        let value = broadcast_to(ta, shape).zip_map(&broadcast_to(tb, shape), f);
        Ok((value, self.g(a) || self.g(b)))
    }

    /// Elementwise sum; a `1 x c`, `r x 1` or `1 x 1` operand is broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, g) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, g) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, g) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), g))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|e| e * c);
        let g = self.g(x);
        self.push(v, Op::Scale(x, c), g)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|e| e + c);
        let g = self.g(x);
        self.push(v, Op::Offset(x), g)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::exp);
        let g = self.g(x);
        self.push(v, Op::Exp(x), g)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::ln);
        let g = self.g(x);
        self.push(v, Op::Log(x), g)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.max(0.0));
        let g = self.g(x);
        self.push(v, Op::Relu(x), g)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        let g = self.g(x);
        self.push(v, Op::Tanh(x), g)
    }

    /// Softmax along `axis` (1 normalizes each row, 0 each column).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        check_axis(axis)?;
        let v = self.softmax_value(self.value(x), axis);
        let g = self.g(x);
        Ok(self.push(v, Op::Softmax(x, axis), g))
    }

    fn softmax_value(&self, x: &Tensor, axis: usize) -> Tensor {
        let lse = logsumexp_lanes(x, axis);
        let idx = lane_index(x.cols(), axis);
        let (n_lanes, len) = lanes(x, axis);
        let mut out = x.clone();
        let d = out.data_mut();
        for (l, &m) in lse.iter().enumerate().take(n_lanes) {
            for i in 0..len {
                let k = idx(l, i);
                d[k] = (d[k] - m).exp();
            }
        }
        out
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        check_axis(axis)?;
        let t = self.value(x);
        let lse = logsumexp_lanes(t, axis);
        let idx = lane_index(t.cols(), axis);
        let (n_lanes, len) = lanes(t, axis);
        let mut out = t.clone();
        let d = out.data_mut();
        for (l, &m) in lse.iter().enumerate().take(n_lanes) {
            for i in 0..len {
                d[idx(l, i)] -= m;
            }
        }
        let g = self.g(x);
        Ok(self.push(out, Op::LogSoftmax(x, axis), g))
    }

    /// Log-sum-exp along `axis`; the reduced dimension becomes 1.
    pub fn logsumexp(&mut self, x: Var, axis: usize) -> Result<Var> {
        check_axis(axis)?;
        let t = self.value(x);
        let lse = logsumexp_lanes(t, axis);
        let v = if axis == 1 {
            Tensor::column(lse)
        } else {
            Tensor::row(lse)
        };
        let g = self.g(x);
        Ok(self.push(v, Op::LogSumExp(x, axis), g))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        check_axis(axis)?;
        let t = self.value(x);
        let (n_lanes, len) = lanes(t, axis);
        let idx = lane_index(t.cols(), axis);
        let sums: Vec<f64> = (0..n_lanes)
            .map(|l| (0..len).map(|i| t.data()[idx(l, i)]).sum())
            .collect();
        let v = if axis == 1 {
            Tensor::column(sums)
        } else {
            Tensor::row(sums)
        };
        let g = self.g(x);
        Ok(self.push(v, Op::SumAxis(x, axis), g))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let g = self.g(x);
        self.push(v, Op::Sum(x), g)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::Degenerate("mean of an empty tensor".into()));
        }
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        let g = self.g(x);
        Ok(self.push(v, Op::Mean(x), g))
    }

    fn check_offsets(&self, op: &'static str, x: Var, offsets: &[usize], nonempty: bool) -> Result<()> {
        let n = self.value(x).rows();
        let ok = offsets.len() >= 2
            && offsets[0] == 0
            && offsets[offsets.len() - 1] == n
            && offsets.windows(2).all(|w| if nonempty { w[0] < w[1] } else { w[0] <= w[1] });
        if ok {
            Ok(())
        } else {
            Err(Error::shape(op, &self.value(x).shape(), offsets))
        }
    }

    /// Sums row ranges `offsets[s]..offsets[s + 1]`; one output row per segment.
    pub fn segment_sum(&mut self, x: Var, offsets: Rc<[usize]>) -> Result<Var> {
        self.check_offsets("segment_sum", x, &offsets, false)?;
        let t = self.value(x);
        let c = t.cols();
        let mut out = Tensor::zeros(offsets.len() - 1, c);
        for (s, w) in offsets.windows(2).enumerate() {
            for r in w[0]..w[1] {
                for j in 0..c {
                    out.data_mut()[s * c + j] += t.get(r, j);
                }
            }
        }
        let g = self.g(x);
        Ok(self.push(out, Op::SegmentSum(x, offsets), g))
    }

    /// Log-sum-exp over each row range, per column.
    pub fn segment_logsumexp(&mut self, x: Var, offsets: Rc<[usize]>) -> Result<Var> {
        self.check_offsets("segment_logsumexp", x, &offsets, true)?;
        let t = self.value(x);
        let v = Tensor::new(offsets.len() - 1, t.cols(), segment_lse(t, &offsets))?;
        let g = self.g(x);
        Ok(self.push(v, Op::SegmentLogSumExp(x, offsets), g))
    }

    /// Log-softmax within each row range, per column.
    pub fn segment_log_softmax(&mut self, x: Var, offsets: Rc<[usize]>) -> Result<Var> {
        self.check_offsets("segment_log_softmax", x, &offsets, true)?;
        let t = self.value(x);
        let c = t.cols();
        let lse = segment_lse(t, &offsets);
        let mut out = t.clone();
        for (s, w) in offsets.windows(2).enumerate() {
            for r in w[0]..w[1] {
                for j in 0..c {
                    out.data_mut()[r * c + j] -= lse[s * c + j];
                }
            }
        }
        let g = self.g(x);
        Ok(self.push(out, Op::SegmentLogSoftmax(x, offsets), g))
    }

    /// Joins tensors along `axis` (0 stacks rows, 1 stacks columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        check_axis(axis)?;
        let Some(&first) = parts.first() else {
            return Err(Error::Degenerate("concat of nothing".into()));
        };
        let shape0 = self.value(first).shape();
        let keep = 1 - axis;
        for &p in parts {
            let s = self.value(p).shape();
            if s[keep] != shape0[keep] {
                return Err(Error::shape("concat", &shape0, &s));
            }
        }
        let v = if axis == 0 {
            let mut data = Vec::new();
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            let rows = parts.iter().map(|&p| self.value(p).rows()).sum();
            Tensor::new(rows, shape0[1], data)?
        } else {
            let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
            let mut data = Vec::with_capacity(shape0[0] * cols);
            for r in 0..shape0[0] {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row_slice(r));
                }
            }
            Tensor::new(shape0[0], cols, data)?
        };
        let g = parts.iter().any(|&p| self.g(p));
        Ok(self.push(v, Op::Concat(parts.to_vec(), axis), g))
    }

    /// `len` rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        check_axis(axis)?;
        let t = self.value(x);
        let extent = t.shape()[axis];
        if start + len > extent {
            return Err(Error::shape("slice", &t.shape(), &[start, start + len]));
        }
        let v = if axis == 0 {
            Tensor::new(len, t.cols(), t.data()[start * t.cols()..(start + len) * t.cols()].to_vec())?
        } else {
            let mut data = Vec::with_capacity(t.rows() * len);
            for r in 0..t.rows() {
                data.extend_from_slice(&t.row_slice(r)[start..start + len]);
            }
            Tensor::new(t.rows(), len, data)?
        };
        let g = self.g(x);
        Ok(self.push(v, Op::Slice { x, axis, start }, g))
    }

    /// Gathers rows by index; indices may repeat.
    pub fn select_rows(&mut self, x: Var, rows: Rc<[usize]>) -> Result<Var> {
        let t = self.value(x);
        let c = t.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows.iter() {
            if r >= t.rows() {
                return Err(Error::shape("select_rows", &t.shape(), &[r]));
            }
            data.extend_from_slice(t.row_slice(r));
        }
        let v = Tensor::new(rows.len(), c, data)?;
        let g = self.g(x);
        Ok(self.push(v, Op::SelectRows(x, rows), g))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x).transpose();
        let g = self.g(x);
        self.push(v, Op::Transpose(x), g)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(x);
        let v = Tensor::new(rows, cols, t.data().to_vec())
            .map_err(|_| Error::shape("reshape", &t.shape(), &[rows, cols]))?;
        let g = self.g(x);
        Ok(self.push(v, Op::Reshape(x), g))
    }

    /// Reverse pass from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.shape() != [1, 1] {
            return Err(Error::shape("backward", &out.shape(), &[1, 1]));
        }
        if !out.is_finite() {
            return Err(Error::NonFinite(format!("loss value {}", out.item())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::scalar(1.0));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param { .. } => {}
            Op::MatMul(a, b) => {
                if self.g(*a) {
                    acc(*a, gemm(g, false, self.value(*b), true));
                }
                if self.g(*b) {
                    acc(*b, gemm(self.value(*a), true, g, false));
                }
            }
            Op::Add(a, b) => {
                acc(*a, reduce_to(g, self.value(*a).shape()));
                acc(*b, reduce_to(g, self.value(*b).shape()));
            }
            Op::Sub(a, b) => {
                acc(*a, reduce_to(g, self.value(*a).shape()));
                acc(*b, reduce_to(&g.map(|e| -e), self.value(*b).shape()));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let shape = y.shape();
                if self.g(*a) {
                    acc(*a, reduce_to(&g.zip_map(&broadcast_to(tb, shape), |x, z| x * z), ta.shape()));
                }
                if self.g(*b) {
                    acc(*b, reduce_to(&g.zip_map(&broadcast_to(ta, shape), |x, z| x * z), tb.shape()));
                }
            }
            Op::Scale(x, c) => acc(*x, g.map(|e| e * c)),
            Op::Offset(x) => acc(*x, g.clone()),
            Op::Exp(x) => acc(*x, g.zip_map(y, |a, b| a * b)),
            Op::Log(x) => acc(*x, g.zip_map(self.value(*x), |a, b| a / b)),
            Op::Relu(x) => acc(*x, g.zip_map(self.value(*x), |a, b| if b > 0.0 { a } else { 0.0 })),
            Op::Tanh(x) => acc(*x, g.zip_map(y, |a, b| a * (1.0 - b * b))),
            Op::Softmax(x, axis) => {
                let (n_lanes, len) = lanes(y, *axis);
                let idx = lane_index(y.cols(), *axis);
                let mut out = g.clone();
                let (gd, yd) = (g.data(), y.data());
                for l in 0..n_lanes {
                    let dot: f64 = (0..len).map(|i| gd[idx(l, i)] * yd[idx(l, i)]).sum();
                    for i in 0..len {
                        let k = idx(l, i);
                        out.data_mut()[k] = yd[k] * (gd[k] - dot);
                    }
                }
                acc(*x, out);
            }
            Op::LogSoftmax(x, axis) => {
                let (n_lanes, len) = lanes(y, *axis);
                let idx = lane_index(y.cols(), *axis);
                let mut out = g.clone();
                let (gd, yd) = (g.data(), y.data());
                for l in 0..n_lanes {
                    let total: f64 = (0..len).map(|i| gd[idx(l, i)]).sum();
                    for i in 0..len {
                        let k = idx(l, i);
                        out.data_mut()[k] = gd[k] - yd[k].exp() * total;
                    }
                }
                acc(*x, out);
            }
            Op::LogSumExp(x, axis) => {
                let t = self.value(*x);
                let (n_lanes, len) = lanes(t, *axis);
                let idx = lane_index(t.cols(), *axis);
                let mut out = t.clone();
                for l in 0..n_lanes {
                    for i in 0..len {
                        let k = idx(l, i);
                        out.data_mut()[k] = g.data()[l] * (t.data()[k] - y.data()[l]).exp();
                    }
                }
                acc(*x, out);
            }
            Op::SumAxis(x, axis) => {
                let shape = self.value(*x).shape();
                let _ = axis;
                acc(*x, broadcast_to(g, shape));
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape();
                acc(*x, Tensor::filled(shape[0], shape[1], g.item()));
            }
            Op::Mean(x) => {
                let t = self.value(*x);
                acc(*x, Tensor::filled(t.rows(), t.cols(), g.item() / t.len() as f64));
            }
            Op::SegmentSum(x, offsets) => {
                let t = self.value(*x);
                let c = t.cols();
                let mut out = Tensor::zeros(t.rows(), c);
                for (s, w) in offsets.windows(2).enumerate() {
                    for r in w[0]..w[1] {
                        out.data_mut()[r * c..(r + 1) * c].copy_from_slice(g.row_slice(s));
                    }
                }
                acc(*x, out);
            }
            Op::SegmentLogSumExp(x, offsets) => {
                let t = self.value(*x);
                let c = t.cols();
                let mut out = Tensor::zeros(t.rows(), c);
                for (s, w) in offsets.windows(2).enumerate() {
                    for r in w[0]..w[1] {
                        for j in 0..c {
                            out.data_mut()[r * c + j] = g.get(s, j) * (t.get(r, j) - y.get(s, j)).exp();
                        }
                    }
                }
                acc(*x, out);
            }
            Op::SegmentLogSoftmax(x, offsets) => {
                let c = y.cols();
                let mut out = g.clone();
                for w in offsets.windows(2) {
                    for j in 0..c {
                        let total: f64 = (w[0]..w[1]).map(|r| g.get(r, j)).sum();
                        for r in w[0]..w[1] {
                            out.data_mut()[r * c + j] = g.get(r, j) - y.get(r, j).exp() * total;
                        }
                    }
                }
                acc(*x, out);
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let s = self.value(p).shape();
                    let n = s[*axis];
                    if self.g(p) {
                        let piece = if *axis == 0 {
                            Tensor::new(n, s[1], g.data()[offset * s[1]..(offset + n) * s[1]].to_vec())
                        } else {
                            let mut data = Vec::with_capacity(s[0] * n);
                            for r in 0..s[0] {
                                data.extend_from_slice(&g.row_slice(r)[offset..offset + n]);
                            }
                            Tensor::new(s[0], n, data)
                        };
                        acc(p, piece.expect("concat piece shape"));
                    }
                    offset += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let t = self.value(*x);
                let mut out = Tensor::zeros(t.rows(), t.cols());
                let c = t.cols();
                for r in 0..g.rows() {
                    for j in 0..g.cols() {
                        let (rr, cc) = if *axis == 0 { (r + start, j) } else { (r, j + start) };
                        out.data_mut()[rr * c + cc] = g.get(r, j);
                    }
                }
                acc(*x, out);
            }
            Op::SelectRows(x, rows) => {
                let t = self.value(*x);
                let c = t.cols();
                let mut out = Tensor::zeros(t.rows(), c);
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..c {
                        out.data_mut()[r * c + j] += g.get(i, j);
                    }
                }
                acc(*x, out);
            }
            Op::Transpose(x) => acc(*x, g.transpose()),
            Op::Reshape(x) => {
                let s = self.value(*x).shape();
                acc(*x, Tensor::new(s[0], s[1], g.data().to_vec()).expect("reshape grad"));
            }
        }
    }

    /// Parameter nodes belonging to the store with `key`, with their ids.
    pub(crate) fn param_nodes(&self, key: u64) -> impl Iterator<Item = (Var, ParamId)> + '_ {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| match n.op {
            Op::Param { store, id } if store == key => Some((Var(i), id)),
            _ => None,
        })
    }
}
