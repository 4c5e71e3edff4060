use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::{axis_extents, broadcast_map, broadcast_shape, matmul_into, reduce_to_shape, transpose_data, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Exp(usize),
    Log(usize),
    Sigmoid(usize),
    Softplus(usize),
    Relu(usize),
    MaxConst(usize, f64),
    Sum { src: usize, axis: usize },
    SumAll(usize),
    LogSumExp { src: usize, axis: usize },
    Broadcast(usize),
    Reshape(usize),
    Concat { srcs: Vec<usize>, axis: usize },
    Slice { src: usize, axis: usize, start: usize },
    IndexSelect { src: usize, axis: usize, indices: Vec<usize> },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations in topological order for reverse-mode
/// differentiation. One tape per forward pass; not `Sync`.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients of the requires-grad leaves reached by a backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf: receives a gradient on backward.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf: gradients never flow into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts.first().ok_or(Error::Empty("concat"))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| self.value(p.id)).collect();
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let len = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
            }
        }
        let requires_grad = parts.iter().any(|p| self.requires_grad(p.id));
        let srcs = parts.iter().map(|p| p.id).collect();
        Ok(self.push(Tensor { shape, data }, Op::Concat { srcs, axis }, requires_grad))
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape: a second call
    /// returns [`Error::TapeConsumed`].
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if self.consumed.get() {
            return Err(Error::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        if nodes.is_empty() {
            return Err(Error::Empty("tape"));
        }
        let loss_value = &nodes[loss.id].value;
        if loss_value.numel() != 1 {
            return Err(Error::NotScalar(loss_value.shape().to_vec()));
        }
        self.consumed.set(true);

        let n = loss.id + 1;
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut leaf_grads: Vec<Option<Tensor>> = vec![None; n];
        pending[loss.id] = Some(vec![1.0]);

        for id in (0..n).rev() {
            let Some(g) = pending[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let out = &node.value;
            let mut acc = |pid: usize, contribution: Vec<f64>| {
                if !nodes[pid].requires_grad {
                    return;
                }
                match &mut pending[pid] {
                    Some(existing) => {
                        for (e, c) in existing.iter_mut().zip(contribution) {
                            *e += c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            };
            let val = |pid: usize| &nodes[pid].value;

            match &node.op {
                Op::Leaf => {
                    leaf_grads[id] = Some(Tensor {
                        shape: out.shape().to_vec(),
                        data: g,
                    });
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (rows, inner, cols) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    if nodes[*a].requires_grad {
                        let bt = transpose_data(bv.data(), inner, cols);
                        let mut da = vec![0.0; rows * inner];
                        matmul_into(&g, &bt, &mut da, rows, cols, inner);
                        acc(*a, da);
                    }
                    if nodes[*b].requires_grad {
                        let at = transpose_data(av.data(), rows, inner);
                        let mut db = vec![0.0; inner * cols];
                        matmul_into(&at, &g, &mut db, inner, rows, cols);
                        acc(*b, db);
                    }
                }
                Op::Transpose(a) => {
                    let s = out.shape();
                    acc(*a, transpose_data(&g, s[0], s[1]));
                }
                Op::Add(a, b) => {
                    acc(*a, reduce_to_shape(&g, out.shape(), val(*a).shape()));
                    acc(*b, reduce_to_shape(&g, out.shape(), val(*b).shape()));
                }
                Op::Sub(a, b) => {
                    acc(*a, reduce_to_shape(&g, out.shape(), val(*a).shape()));
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    acc(*b, reduce_to_shape(&neg, out.shape(), val(*b).shape()));
                }
                Op::Mul(a, b) | Op::Div(a, b) => {
                    let is_div = matches!(node.op, Op::Div(..));
                    let (av, bv) = (val(*a), val(*b));
                    let a_at = expand(av, out.shape());
                    let b_at = expand(bv, out.shape());
                    if nodes[*a].requires_grad {
                        let da: Vec<f64> = (0..g.len())
                            .map(|i| if is_div { g[i] / b_at(i) } else { g[i] * b_at(i) })
                            .collect();
                        acc(*a, reduce_to_shape(&da, out.shape(), av.shape()));
                    }
                    if nodes[*b].requires_grad {
                        let db: Vec<f64> = (0..g.len())
                            .map(|i| {
                                if is_div {
                                    -g[i] * a_at(i) / (b_at(i) * b_at(i))
                                } else {
                                    g[i] * a_at(i)
                                }
                            })
                            .collect();
                        acc(*b, reduce_to_shape(&db, out.shape(), bv.shape()));
                    }
                }
                Op::Neg(a) => acc(*a, g.iter().map(|v| -v).collect()),
                Op::Scale(a, s) => acc(*a, g.iter().map(|v| v * s).collect()),
                Op::Exp(a) => acc(*a, zip_map(&g, out.data(), |gi, y| gi * y)),
                Op::Log(a) => acc(*a, zip_map(&g, val(*a).data(), |gi, x| gi / x)),
                Op::Sigmoid(a) => acc(*a, zip_map(&g, out.data(), |gi, y| gi * y * (1.0 - y))),
                Op::Softplus(a) => acc(*a, zip_map(&g, val(*a).data(), |gi, x| gi * sigmoid(x))),
                Op::Relu(a) => acc(*a, zip_map(&g, val(*a).data(), |gi, x| if x > 0.0 { gi } else { 0.0 })),
                Op::MaxConst(a, c) => {
                    acc(*a, zip_map(&g, val(*a).data(), |gi, x| if x > *c { gi } else { 0.0 }))
                }
                Op::Sum { src, axis } => {
                    let (outer, len, inner) = axis_extents(val(*src).shape(), *axis);
                    let mut da = vec![0.0; outer * len * inner];
                    for o in 0..outer {
                        for k in 0..len {
                            for i in 0..inner {
                                da[(o * len + k) * inner + i] = g[o * inner + i];
                            }
                        }
                    }
                    acc(*src, da);
                }
                Op::SumAll(a) => acc(*a, vec![g[0]; val(*a).numel()]),
                Op::LogSumExp { src, axis } => {
                    let x = val(*src);
                    let (outer, len, inner) = axis_extents(x.shape(), *axis);
                    let mut da = vec![0.0; outer * len * inner];
                    for o in 0..outer {
                        for i in 0..inner {
                            let lse = out.data()[o * inner + i];
                            for k in 0..len {
                                let idx = (o * len + k) * inner + i;
                                da[idx] = g[o * inner + i] * (x.data()[idx] - lse).exp();
                            }
                        }
                    }
                    acc(*src, da);
                }
                Op::Broadcast(a) => acc(*a, reduce_to_shape(&g, out.shape(), val(*a).shape())),
                Op::Reshape(a) => acc(*a, g),
                Op::Concat { srcs, axis } => {
                    let (outer, _, inner) = axis_extents(out.shape(), *axis);
                    let total = out.shape()[*axis];
                    let mut offset = 0;
                    for &s in srcs {
                        let len = val(s).shape()[*axis];
                        let mut part = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            part.extend_from_slice(&g[base..base + len * inner]);
                        }
                        offset += len;
                        acc(s, part);
                    }
                }
                Op::Slice { src, axis, start } => {
                    let src_shape = val(*src).shape();
                    let (outer, full, inner) = axis_extents(src_shape, *axis);
                    let len = out.shape()[*axis];
                    let mut da = vec![0.0; outer * full * inner];
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        da[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                    }
                    acc(*src, da);
                }
                Op::IndexSelect { src, axis, indices } => {
                    let src_shape = val(*src).shape();
                    let (outer, full, inner) = axis_extents(src_shape, *axis);
                    let mut da = vec![0.0; outer * full * inner];
                    let picked = indices.len();
                    for o in 0..outer {
                        for (k, &ix) in indices.iter().enumerate() {
                            for i in 0..inner {
                                da[(o * full + ix) * inner + i] += g[(o * picked + k) * inner + i];
                            }
                        }
                    }
                    acc(*src, da);
                }
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }
}

fn zip_map(g: &[f64], x: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    g.iter().zip(x).map(|(&a, &b)| f(a, b)).collect()
}

/// Accessor for `t` viewed at broadcast shape `out`.
fn expand<'a>(t: &'a Tensor, out: &[usize]) -> impl Fn(usize) -> f64 + 'a {
    let map = if t.shape() == out {
        None
    } else {
        Some(broadcast_map(t.shape(), out))
    };
    move |i| match &map {
        None => t.data()[i],
        Some(m) => t.data()[m[i]],
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = self.value().map(f);
        self.tape.push(value, op, self.requires_grad())
    }

    fn binary(&self, other: Var<'t>, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let shape = broadcast_shape(name, a.shape(), b.shape())?;
        let data: Vec<f64> = if a.shape() == b.shape() {
            a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let (ax, bx) = (expand(&a, &shape), expand(&b, &shape));
            let numel: usize = shape.iter().product();
            (0..numel).map(|i| f(ax(i), bx(i))).collect()
        };
        let requires_grad = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(Tensor { shape, data }, op, requires_grad))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// Division by zero is not trapped: infinities and NaNs propagate to the
    /// loss, where the training loop's finiteness guard catches them.
    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn add_scalar(&self, s: f64) -> Var<'t> {
        let c = self.tape.scalar(s);
        self.add(c).expect("scalar broadcasts against any shape")
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, s), |x| x * s)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn log(&self) -> Var<'t> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn softplus(&self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    /// Elementwise `max(x, c)`; the gradient passes only where `x > c`.
    pub fn max_const(&self, c: f64) -> Var<'t> {
        self.unary(Op::MaxConst(self.id, c), |x| x.max(c))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let value = self.value().matmul(&other.value())?;
        let requires_grad = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), requires_grad))
    }

    pub fn t(&self) -> Result<Var<'t>> {
        let value = self.value().transpose()?;
        Ok(self.tape.push(value, Op::Transpose(self.id), self.requires_grad()))
    }

    fn check_axis(&self, op: &'static str, axis: usize) -> Result<Vec<usize>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::invalid(op, format!("axis {axis} out of range for {shape:?}")));
        }
        Ok(shape)
    }

    fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
        let mut out = shape.to_vec();
        if keepdim {
            out[axis] = 1;
        } else {
            out.remove(axis);
        }
        out
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Var<'t>> {
        let shape = self.check_axis("sum", axis)?;
        let x = self.value();
        let (outer, len, inner) = axis_extents(&shape, axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                for i in 0..inner {
                    data[o * inner + i] += x.data()[(o * len + k) * inner + i];
                }
            }
        }
        let value = Tensor {
            shape: Self::reduced_shape(&shape, axis, keepdim),
            data,
        };
        Ok(self.tape.push(value, Op::Sum { src: self.id, axis }, self.requires_grad()))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Var<'t>> {
        let len = self.check_axis("mean", axis)?[axis];
        Ok(self.sum_axis(axis, keepdim)?.scale(1.0 / len as f64))
    }

    pub fn sum_all(&self) -> Var<'t> {
        let total = self.value().data().iter().sum();
        self.tape.push(Tensor::scalar(total), Op::SumAll(self.id), self.requires_grad())
    }

    pub fn mean_all(&self) -> Var<'t> {
        let n = self.value().numel() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Numerically stable `log Σ exp` along `axis`.
    pub fn logsumexp(&self, axis: usize, keepdim: bool) -> Result<Var<'t>> {
        let shape = self.check_axis("logsumexp", axis)?;
        let x = self.value();
        let (outer, len, inner) = axis_extents(&shape, axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| x.data()[(o * len + k) * inner + i];
                let m = (0..len).map(at).fold(f64::NEG_INFINITY, f64::max);
                data[o * inner + i] = if m.is_finite() {
                    m + (0..len).map(|k| (at(k) - m).exp()).sum::<f64>().ln()
                } else {
                    m
                };
            }
        }
        let value = Tensor {
            shape: Self::reduced_shape(&shape, axis, keepdim),
            data,
        };
        Ok(self.tape.push(value, Op::LogSumExp { src: self.id, axis }, self.requires_grad()))
    }

    /// `exp(x - logsumexp(x))` along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        let lse = self.logsumexp(axis, true)?;
        Ok(self.sub(lse)?.exp())
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let target = broadcast_shape("broadcast", x.shape(), shape)?;
        if target != shape {
            return Err(Error::shape("broadcast", x.shape(), shape));
        }
        let data = broadcast_map(x.shape(), shape).into_iter().map(|i| x.data()[i]).collect();
        let value = Tensor {
            shape: shape.to_vec(),
            data,
        };
        Ok(self.tape.push(value, Op::Broadcast(self.id), self.requires_grad()))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let value = (*self.value()).clone().reshaped(shape)?;
        Ok(self.tape.push(value, Op::Reshape(self.id), self.requires_grad()))
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let shape = self.check_axis("slice", axis)?;
        if start + len > shape[axis] {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} exceeds axis {axis} of {shape:?}", start + len),
            ));
        }
        let x = self.value();
        let (outer, full, inner) = axis_extents(&shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor { shape: out_shape, data };
        Ok(self.tape.push(value, Op::Slice { src: self.id, axis, start }, self.requires_grad()))
    }

    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Var<'t>> {
        let shape = self.check_axis("index_select", axis)?;
        if let Some(bad) = indices.iter().find(|&&i| i >= shape[axis]) {
            return Err(Error::invalid(
                "index_select",
                format!("index {bad} out of range for axis {axis} of {shape:?}"),
            ));
        }
        let x = self.value();
        let (outer, full, inner) = axis_extents(&shape, axis);
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &ix in indices {
                let base = (o * full + ix) * inner;
                data.extend_from_slice(&x.data()[base..base + inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = indices.len();
        let value = Tensor { shape: out_shape, data };
        let op = Op::IndexSelect {
            src: self.id,
            axis,
            indices: indices.to_vec(),
        };
        Ok(self.tape.push(value, op, self.requires_grad()))
    }
}
