use rand::Rng;

use crate::Scalar;

use super::tensor::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc};
use super::{AutodiffError, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary elementwise op is broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// `[cols]` or `[1, cols]` repeated over every row of the left operand.
    Row,
    /// One value applied to every element.
    Scalar,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(NodeId, NodeId, Broadcast),
    Sub(NodeId, NodeId, Broadcast),
    Mul(NodeId, NodeId, Broadcast),
    Scale(NodeId, T),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    Concat(Vec<NodeId>),
    SliceCols { input: NodeId, start: usize },
    Gather { input: NodeId, indices: Vec<usize> },
    GatherRows { input: NodeId, rows: Vec<usize> },
    Reshape(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumLast(NodeId),
    NormLast(NodeId),
    /// Selected column per row (min or max); the full gradient goes there.
    SelectLast { input: NodeId, arg: Vec<usize> },
    /// Multiplicative mask; already includes any rescaling.
    MaskMul { input: NodeId, mask: Vec<T> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Append-only record of a computation for reverse-mode differentiation.
///
/// Inputs of every node precede it, so a reverse sweep over insertion
/// order is a valid topological order.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar output with respect to every recorded node that
/// depends on a differentiable leaf.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `id`, `None` when the output does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `id`, zeros when the output does not depend on it.
    pub fn wrt(&self, id: NodeId) -> Tensor<T> {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf (an input or target).
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn broadcast_kind(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Broadcast> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() == vb.shape() {
            Ok(Broadcast::Same)
        } else if vb.len() == 1 {
            Ok(Broadcast::Scalar)
        } else if vb.len() == va.cols() && vb.rows() == 1 && va.shape().len() >= 2 {
            Ok(Broadcast::Row)
        } else {
            Err(AutodiffError::ShapeMismatch {
                op,
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            })
        }
    }

    fn elementwise(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(T, T) -> T,
        make: impl Fn(NodeId, NodeId, Broadcast) -> Op<T>,
    ) -> Result<NodeId> {
        let kind = self.broadcast_kind(op_name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let cols = va.cols();
        let data: Vec<T> = match kind {
            Broadcast::Same => va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect(),
            Broadcast::Scalar => {
                let y = vb.data()[0];
                va.data().iter().map(|x| f(*x, y)).collect()
            }
            Broadcast::Row => va
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| f(*x, vb.data()[i % cols]))
                .collect(),
        };
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, make(a, b, kind), needs))
    }

    /// `a + b`; `b` may broadcast as a row or a scalar.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add)
    }

    /// `a - b`; `b` may broadcast as a row or a scalar.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub)
    }

    /// Elementwise `a * b`; `b` may broadcast as a row or a scalar.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let value = self.value(a).map(|v| v * c);
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, c), needs)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: T) -> NodeId {
        let value = self.value(a).map(|v| v + c);
        let needs = self.needs(a);
        self.push(value, Op::AddScalar(a), needs)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -T::one())
    }

    /// `[m,k] · [k,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        matmul_acc(va.data(), vb.data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), needs))
    }

    /// Concatenation along the last axis; all inputs share the row count.
    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = *inputs.first().ok_or(AutodiffError::InvalidArgument("concat of nothing".into()))?;
        let rows = self.value(first).rows();
        let mut total = 0;
        for &id in inputs {
            let v = self.value(id);
            if v.rows() != rows {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            total += v.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &id in inputs {
                let v = self.value(id);
                let c = v.cols();
                data.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
            }
        }
        let needs = inputs.iter().any(|id| self.needs(*id));
        let value = Tensor::from_parts(vec![rows, total], data);
        Ok(self.push(value, Op::Concat(inputs.to_vec()), needs))
    }

    /// Columns `start..end` of every row.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(a);
        let cols = v.cols();
        if start >= end || end > cols {
            return Err(AutodiffError::InvalidArgument(format!(
                "slice {start}..{end} of {cols} columns"
            )));
        }
        let rows = v.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&v.data()[r * cols + start..r * cols + end]);
        }
        let needs = self.needs(a);
        let value = Tensor::from_parts(vec![rows, end - start], data);
        Ok(self.push(value, Op::SliceCols { input: a, start }, needs))
    }

    /// Picks flat elements of `a` by index and lays them out in `shape`.
    pub fn gather(&mut self, a: NodeId, indices: Vec<usize>, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.value(a);
        if shape.iter().product::<usize>() != indices.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "gather",
                lhs: shape,
                rhs: vec![indices.len()],
            });
        }
        if let Some(bad) = indices.iter().find(|i| **i >= v.len()) {
            return Err(AutodiffError::InvalidArgument(format!(
                "gather index {bad} out of {}",
                v.len()
            )));
        }
        let data = indices.iter().map(|i| v.data()[*i]).collect();
        let needs = self.needs(a);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Gather { input: a, indices }, needs))
    }

    /// Picks whole rows (last-axis vectors) of `a`; rows may repeat.
    pub fn gather_rows(&mut self, a: NodeId, rows: Vec<usize>) -> Result<NodeId> {
        let v = self.value(a);
        let (n_rows, cols) = (v.rows(), v.cols());
        if let Some(bad) = rows.iter().find(|r| **r >= n_rows) {
            return Err(AutodiffError::InvalidArgument(format!(
                "row {bad} out of {n_rows}"
            )));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in &rows {
            data.extend_from_slice(&v.data()[r * cols..(r + 1) * cols]);
        }
        let needs = self.needs(a);
        let value = Tensor::from_parts(vec![rows.len(), cols], data);
        Ok(self.push(value, Op::GatherRows { input: a, rows }, needs))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let value = self.value(a).clone().reshaped(shape)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Reshape(a), needs))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(T) -> T, op: Op<T>) -> NodeId {
        let value = self.value(a).map(f);
        let needs = self.needs(a);
        self.push(value, op, needs)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |v| v.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Rectifier; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |v| v.max(T::zero()), Op::Relu(a))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let id = self.unary(a, |v| v.exp(), Op::Exp(a));
        if !self.value(id).is_finite() {
            return Err(AutodiffError::DomainError("exp overflow"));
        }
        Ok(id)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).data().iter().any(|v| *v <= T::zero()) {
            return Err(AutodiffError::DomainError("log of a non-positive value"));
        }
        Ok(self.unary(a, |v| v.ln(), Op::Log(a)))
    }

    /// Softmax along the last axis, computed with max subtraction.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let cols = v.cols();
        let mut data = Vec::with_capacity(v.len());
        for row in v.data().chunks(cols) {
            data.extend(softmax_row(row));
        }
        let value = Tensor::from_parts(v.shape().to_vec(), data);
        let needs = self.needs(a);
        self.push(value, Op::Softmax(a), needs)
    }

    /// Log of the softmax along the last axis.
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let cols = v.cols();
        let mut data = Vec::with_capacity(v.len());
        for row in v.data().chunks(cols) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|x| (*x - max).exp()).sum::<T>().ln();
            data.extend(row.iter().map(|x| *x - lse));
        }
        let value = Tensor::from_parts(v.shape().to_vec(), data);
        let needs = self.needs(a);
        self.push(value, Op::LogSoftmax(a), needs)
    }

    /// Sum of every element, shape `[1]`.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().copied().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    /// Mean of every element, shape `[1]`.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let s: T = v.data().iter().copied().sum();
        let m = s / T::from_usize_lossy(v.len());
        let needs = self.needs(a);
        self.push(Tensor::scalar(m), Op::Mean(a), needs)
    }

    /// Row sums, shape `[rows, 1]`.
    pub fn sum_last(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let data: Vec<T> = v.data().chunks(v.cols()).map(|r| r.iter().copied().sum()).collect();
        let rows = data.len();
        let needs = self.needs(a);
        self.push(Tensor::from_parts(vec![rows, 1], data), Op::SumLast(a), needs)
    }

    /// Euclidean norm of every row, shape `[rows, 1]`. The subgradient at
    /// the zero vector is zero.
    pub fn norm_last(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let data: Vec<T> = v
            .data()
            .chunks(v.cols())
            .map(|r| r.iter().map(|x| *x * *x).sum::<T>().sqrt())
            .collect();
        let rows = data.len();
        let needs = self.needs(a);
        self.push(Tensor::from_parts(vec![rows, 1], data), Op::NormLast(a), needs)
    }

    fn select_last(&mut self, a: NodeId, better: impl Fn(T, T) -> bool) -> NodeId {
        let v = self.value(a);
        let cols = v.cols();
        let mut arg = Vec::with_capacity(v.rows());
        let mut data = Vec::with_capacity(v.rows());
        for row in v.data().chunks(cols) {
            let mut best = 0;
            for (j, x) in row.iter().enumerate().skip(1) {
                if better(*x, row[best]) {
                    best = j;
                }
            }
            arg.push(best);
            data.push(row[best]);
        }
        let rows = data.len();
        let needs = self.needs(a);
        self.push(
            Tensor::from_parts(vec![rows, 1], data),
            Op::SelectLast { input: a, arg },
            needs,
        )
    }

    /// Row minima, shape `[rows, 1]`; the gradient goes to the earliest
    /// minimiser.
    pub fn min_last(&mut self, a: NodeId) -> NodeId {
        self.select_last(a, |x, best| x < best)
    }

    /// Row maxima, shape `[rows, 1]`; the gradient goes to the earliest
    /// maximiser.
    pub fn max_last(&mut self, a: NodeId) -> NodeId {
        self.select_last(a, |x, best| x > best)
    }

    /// Inverted dropout: at train time each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`. A no-op
    /// in evaluation mode.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: NodeId,
        rate: T,
        rng: &mut R,
        train: bool,
    ) -> Result<NodeId> {
        if !(T::zero()..T::one()).contains(&rate) {
            return Err(AutodiffError::InvalidArgument(format!("dropout rate {rate}")));
        }
        if !train || rate == T::zero() {
            return Ok(a);
        }
        let keep_scale = T::one() / (T::one() - rate);
        let p = rate.as_f64();
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep_scale })
            .collect();
        Ok(self.mask_mul(a, mask))
    }

    /// Keeps entries where `mask` is true and zeroes the rest.
    pub fn mask_select(&mut self, a: NodeId, mask: &[bool]) -> Result<NodeId> {
        if mask.len() != self.value(a).len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mask_select",
                lhs: self.shape(a).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let m = mask.iter().map(|k| if *k { T::one() } else { T::zero() }).collect();
        Ok(self.mask_mul(a, m))
    }

    fn mask_mul(&mut self, a: NodeId, mask: Vec<T>) -> NodeId {
        let v = self.value(a);
        let data = v.data().iter().zip(&mask).map(|(x, m)| *x * *m).collect();
        let value = Tensor::from_parts(v.shape().to_vec(), data);
        let needs = self.needs(a);
        self.push(value, Op::MaskMul { input: a, mask }, needs)
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, output: NodeId) -> Result<Gradients<T>> {
        let out_value = self.value(output);
        if out_value.len() != 1 {
            return Err(AutodiffError::NotScalarOutput(out_value.shape().to_vec()));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        if self.nodes[output.0].needs_grad {
            grads[output.0] = Some(Tensor::full(out_value.shape(), T::one()));
        }
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let mut acc = |id: NodeId, contrib: Tensor<T>| {
            if !self.nodes[id.0].needs_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot => *slot = Some(contrib),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b, kind) => {
                acc(*a, g.clone());
                if self.needs(*b) {
                    acc(*b, reduce_broadcast(g, *kind, val(*b).shape()));
                }
            }
            Op::Sub(a, b, kind) => {
                acc(*a, g.clone());
                if self.needs(*b) {
                    let neg = g.map(|v| -v);
                    acc(*b, reduce_broadcast(&neg, *kind, val(*b).shape()));
                }
            }
            Op::Mul(a, b, kind) => {
                let (va, vb) = (val(*a), val(*b));
                let cols = va.cols();
                if self.needs(*a) {
                    let data = gd
                        .iter()
                        .enumerate()
                        .map(|(i, gv)| {
                            *gv * match kind {
                                Broadcast::Same => vb.data()[i],
                                Broadcast::Scalar => vb.data()[0],
                                Broadcast::Row => vb.data()[i % cols],
                            }
                        })
                        .collect();
                    acc(*a, Tensor::from_parts(va.shape().to_vec(), data));
                }
                if self.needs(*b) {
                    let prod = Tensor::from_parts(
                        va.shape().to_vec(),
                        gd.iter().zip(va.data()).map(|(x, y)| *x * *y).collect(),
                    );
                    acc(*b, reduce_broadcast(&prod, *kind, vb.shape()));
                }
            }
            Op::Scale(a, c) => acc(*a, g.map(|v| v * *c)),
            Op::AddScalar(a) | Op::Reshape(a) => {
                let shape = val(*a).shape().to_vec();
                acc(*a, Tensor::from_parts(shape, gd.to_vec()));
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.needs(*a) {
                    let mut da = vec![T::zero(); m * k];
                    matmul_a_bt_acc(gd, vb.data(), &mut da, m, k, n);
                    acc(*a, Tensor::from_parts(vec![m, k], da));
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); k * n];
                    matmul_at_b_acc(va.data(), gd, &mut db, m, k, n);
                    acc(*b, Tensor::from_parts(vec![k, n], db));
                }
            }
            Op::Concat(inputs) => {
                let total = g.cols();
                let rows = g.rows();
                let mut offset = 0;
                for &id in inputs {
                    let c = val(id).cols();
                    if self.needs(id) {
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&gd[r * total + offset..r * total + offset + c]);
                        }
                        acc(id, Tensor::from_parts(val(id).shape().to_vec(), d));
                    }
                    offset += c;
                }
            }
            Op::SliceCols { input, start } => {
                let v = val(*input);
                let cols = v.cols();
                let width = g.cols();
                let mut d = vec![T::zero(); v.len()];
                for r in 0..v.rows() {
                    d[r * cols + start..r * cols + start + width]
                        .copy_from_slice(&gd[r * width..(r + 1) * width]);
                }
                acc(*input, Tensor::from_parts(v.shape().to_vec(), d));
            }
            Op::Gather { input, indices } => {
                let v = val(*input);
                let mut d = vec![T::zero(); v.len()];
                for (gv, &i) in gd.iter().zip(indices) {
                    d[i] += *gv;
                }
                acc(*input, Tensor::from_parts(v.shape().to_vec(), d));
            }
            Op::GatherRows { input, rows } => {
                let v = val(*input);
                let cols = v.cols();
                let mut d = vec![T::zero(); v.len()];
                for (j, &r) in rows.iter().enumerate() {
                    for c in 0..cols {
                        d[r * cols + c] += gd[j * cols + c];
                    }
                }
                acc(*input, Tensor::from_parts(v.shape().to_vec(), d));
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(gv, yv)| *gv * (T::one() - *yv * *yv)).collect();
                acc(*a, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(gv, yv)| *gv * *yv * (T::one() - *yv)).collect();
                acc(*a, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(gv, xv)| if *xv > T::zero() { *gv } else { T::zero() })
                    .collect();
                acc(*a, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Exp(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(gv, yv)| *gv * *yv).collect();
                acc(*a, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Log(a) => {
                let x = val(*a).data();
                let d = gd.iter().zip(x).map(|(gv, xv)| *gv / *xv).collect();
                acc(*a, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let cols = g.cols();
                let mut d = Vec::with_capacity(y.len());
                for (gr, yr) in gd.chunks(cols).zip(y.chunks(cols)) {
                    let dot: T = gr.iter().zip(yr).map(|(x, z)| *x * *z).sum();
                    d.extend(gr.iter().zip(yr).map(|(x, z)| *z * (*x - dot)));
                }
                acc(*a, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::LogSoftmax(a) => {
                let y = node.value.data();
                let cols = g.cols();
                let mut d = Vec::with_capacity(y.len());
                for (gr, yr) in gd.chunks(cols).zip(y.chunks(cols)) {
                    let total: T = gr.iter().copied().sum();
                    d.extend(gr.iter().zip(yr).map(|(x, z)| *x - z.exp() * total));
                }
                acc(*a, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Sum(a) => {
                let shape = val(*a).shape().to_vec();
                acc(*a, Tensor::full(&shape, gd[0]));
            }
            Op::Mean(a) => {
                let v = val(*a);
                let share = gd[0] / T::from_usize_lossy(v.len());
                acc(*a, Tensor::full(v.shape(), share));
            }
            Op::SumLast(a) => {
                let v = val(*a);
                let cols = v.cols();
                let d = (0..v.len()).map(|i| gd[i / cols]).collect();
                acc(*a, Tensor::from_parts(v.shape().to_vec(), d));
            }
            Op::NormLast(a) => {
                let v = val(*a);
                let cols = v.cols();
                let norms = node.value.data();
                let d = v
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| {
                        let r = i / cols;
                        if norms[r] > T::zero() {
                            gd[r] * *x / norms[r]
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                acc(*a, Tensor::from_parts(v.shape().to_vec(), d));
            }
            Op::SelectLast { input, arg } => {
                let v = val(*input);
                let cols = v.cols();
                let mut d = vec![T::zero(); v.len()];
                for (r, &j) in arg.iter().enumerate() {
                    d[r * cols + j] = gd[r];
                }
                acc(*input, Tensor::from_parts(v.shape().to_vec(), d));
            }
            Op::MaskMul { input, mask } => {
                let d = gd.iter().zip(mask).map(|(x, m)| *x * *m).collect();
                acc(*input, Tensor::from_parts(g.shape().to_vec(), d));
            }
        }
    }
}

fn reduce_broadcast<T: Scalar>(g: &Tensor<T>, kind: Broadcast, target: &[usize]) -> Tensor<T> {
    match kind {
        Broadcast::Same => g.clone(),
        Broadcast::Scalar => Tensor::from_parts(target.to_vec(), vec![g.data().iter().copied().sum()]),
        Broadcast::Row => {
            let cols = g.cols();
            let mut d = vec![T::zero(); cols];
            for (i, v) in g.data().iter().enumerate() {
                d[i % cols] += *v;
            }
            Tensor::from_parts(target.to_vec(), d)
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Softmax of a slice with max subtraction.
pub fn softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|x| (*x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}
