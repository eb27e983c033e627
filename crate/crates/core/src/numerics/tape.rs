use std::cell::{Cell, Ref, RefCell};
use std::fmt;

use crate::error::{Error, Result};

use super::kernels::{self as k, ConvDims, MatmulDims};
use super::{RngState, Tensor};

type NodeId = usize;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId, MatmulDims),
    TransposeLast(NodeId),
    Reshape(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Abs(NodeId),
    Softmax(NodeId),
    LayerNorm {
        x: NodeId,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: NodeId,
        mask: Vec<f64>,
    },
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    Narrow {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Sum(NodeId),
    Mean(NodeId),
    SumAxis {
        x: NodeId,
        axis: usize,
    },
    ConvTime {
        x: NodeId,
        w: NodeId,
        dims: ConvDims,
    },
    ChannelMap {
        w: NodeId,
        x: NodeId,
    },
    Propagate {
        p: NodeId,
        x: NodeId,
    },
    PairwiseSqDist(NodeId),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive operations in execution order so gradients can be
/// replayed backward once.
///
/// Nodes are appended as operations run, which makes the node order a valid
/// topological order by construction.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Tensor>>>,
    consumed: Cell<bool>,
    debug_checks: bool,
    layer: RefCell<Option<String>>,
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    id: NodeId,
    tape: &'t Tape,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
            debug_checks: false,
            layer: RefCell::new(None),
        }
    }

    /// A tape that rejects non-finite operands with [`Error::NonFinite`].
    pub fn with_debug_checks() -> Self {
        Tape {
            debug_checks: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed.get()
    }

    pub fn debug_checks(&self) -> bool {
        self.debug_checks
    }

    /// Labels the ops recorded from now on, so debug-check failures can
    /// name the layer they happened in.
    pub fn enter_layer(&self, name: &str) {
        if self.debug_checks {
            *self.layer.borrow_mut() = Some(name.to_string());
        }
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            id: nodes.len() - 1,
            tape: self,
        }
    }

    fn value(&self, id: NodeId) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn requires_grad(&self, ids: &[NodeId]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn check_finite(&self, op: &'static str, ids: &[NodeId]) -> Result<()> {
        if !self.debug_checks {
            return Ok(());
        }
        let nodes = self.nodes.borrow();
        for &i in ids {
            if !nodes[i].value.is_finite() {
                let context = match self.layer.borrow().as_deref() {
                    Some(layer) => format!("input #{i} of {op} in {layer}"),
                    None => format!("input #{i} of {op}"),
                };
                return Err(Error::NonFinite { context });
            }
        }
        Ok(())
    }

    fn record(&self, op: Op, inputs: &[NodeId], value: Tensor) -> Var<'_> {
        let rg = self.requires_grad(inputs);
        self.push(value, if rg { op } else { Op::Leaf }, rg)
    }

    /// Concatenates tensors of equal rank along `axis`.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let ids: Vec<NodeId> = parts.iter().map(|v| v.id).collect();
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?
            .shape();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {first:?}")));
        }
        self.check_finite("concat", &ids)?;
        let shapes: Vec<Vec<usize>> = parts.iter().map(|v| v.shape()).collect();
        for s in &shapes[1..] {
            let ok = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(ax, (a, b))| ax == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", format!("{first:?} vs {s:?}")));
            }
        }
        let total: usize = shapes.iter().map(|s| s[axis]).sum();
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = k::split_axis(&out_shape, axis);
        let mut data = Vec::with_capacity(out_shape.iter().product());
        {
            let nodes = self.nodes.borrow();
            for o in 0..outer {
                for (id, s) in ids.iter().zip(&shapes) {
                    let blk = s[axis] * inner;
                    data.extend_from_slice(&nodes[*id].value.data()[o * blk..(o + 1) * blk]);
                }
            }
        }
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.record(
            Op::Concat {
                inputs: ids.clone(),
                axis,
            },
            &ids,
            value,
        ))
    }

    /// Gradient accumulated for `v` by [`Tape::backward`].
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        self.grads.borrow().get(v.id).cloned().flatten()
    }

    /// Reverse sweep from a scalar `loss`. Populates the gradient slot of every
    /// trainable leaf (zeros when the loss does not depend on it) and consumes
    /// the tape.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        if self.consumed.get() {
            return Err(Error::State("backward called on a consumed tape".into()));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if self.debug_checks && !root.value.is_finite() {
            return Err(Error::NonFinite {
                context: "loss".into(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (input, gi) in adjoint(&nodes, node, &g) {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(gi),
                }
            }
        }
        let mut out = self.grads.borrow_mut();
        *out = nodes
            .iter()
            .zip(grads)
            .map(|(n, g)| {
                if !(n.requires_grad && matches!(n.op, Op::Leaf)) {
                    return None;
                }
                let data = g.unwrap_or_else(|| vec![0.0; n.value.numel()]);
                Some(Tensor::new(n.value.shape(), data).expect("grad shape"))
            })
            .collect();
        self.consumed.set(true);
        Ok(())
    }
}

/// Vector-Jacobian products of one node: `(input id, gradient)` pairs.
fn adjoint(nodes: &[Node], node: &Node, g: &[f64]) -> Vec<(NodeId, Vec<f64>)> {
    let val = |i: NodeId| &nodes[i].value;
    let out = &node.value;
    let unary = |x: NodeId, f: &dyn Fn(usize) -> f64| -> Vec<(NodeId, Vec<f64>)> {
        vec![(x, (0..g.len()).map(|i| g[i] * f(i)).collect())]
    };
    match &node.op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![
            (*a, k::reduce_to(g, out.shape(), val(*a).shape())),
            (*b, k::reduce_to(g, out.shape(), val(*b).shape())),
        ],
        Op::Sub(a, b) => {
            let neg: Vec<f64> = g.iter().map(|x| -x).collect();
            vec![
                (*a, k::reduce_to(g, out.shape(), val(*a).shape())),
                (*b, k::reduce_to(&neg, out.shape(), val(*b).shape())),
            ]
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let ga: Vec<f64> = g
                .iter()
                .zip(k::binary(ta, tb, out.shape(), |_, y| y))
                .map(|(g, y)| g * y)
                .collect();
            let gb: Vec<f64> = g
                .iter()
                .zip(k::binary(ta, tb, out.shape(), |x, _| x))
                .map(|(g, x)| g * x)
                .collect();
            vec![
                (*a, k::reduce_to(&ga, out.shape(), ta.shape())),
                (*b, k::reduce_to(&gb, out.shape(), tb.shape())),
            ]
        }
        Op::Div(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let ga: Vec<f64> = g
                .iter()
                .zip(k::binary(ta, tb, out.shape(), |_, y| 1.0 / y))
                .map(|(g, d)| g * d)
                .collect();
            let gb: Vec<f64> = g
                .iter()
                .zip(k::binary(ta, tb, out.shape(), |x, y| -x / (y * y)))
                .map(|(g, d)| g * d)
                .collect();
            vec![
                (*a, k::reduce_to(&ga, out.shape(), ta.shape())),
                (*b, k::reduce_to(&gb, out.shape(), tb.shape())),
            ]
        }
        Op::Scale(x, s) => vec![(*x, g.iter().map(|v| v * s).collect())],
        Op::AddScalar(x) | Op::Reshape(x) => vec![(*x, g.to_vec())],
        Op::MatMul(a, b, dims) => {
            let (ga, gb) = k::matmul_backward(val(*a).data(), val(*b).data(), g, *dims);
            vec![(*a, ga), (*b, gb)]
        }
        Op::TransposeLast(x) => vec![(*x, k::transpose_last(g, out.shape()))],
        Op::Relu(x) => {
            let xd = val(*x).data();
            unary(*x, &|i| if xd[i] > 0.0 { 1.0 } else { 0.0 })
        }
        Op::Abs(x) => {
            let xd = val(*x).data();
            unary(*x, &|i| xd[i].signum() * f64::from(u8::from(xd[i] != 0.0)))
        }
        Op::Tanh(x) => {
            let y = out.data();
            unary(*x, &|i| 1.0 - y[i] * y[i])
        }
        Op::Sigmoid(x) => {
            let y = out.data();
            unary(*x, &|i| y[i] * (1.0 - y[i]))
        }
        Op::Softmax(x) => {
            let cols = *out.shape().last().unwrap_or(&1);
            vec![(*x, k::softmax_rows_backward(out.data(), g, cols))]
        }
        Op::LayerNorm { x, inv_std } => {
            let cols = *out.shape().last().unwrap_or(&1);
            vec![(
                *x,
                k::layer_norm_rows_backward(out.data(), inv_std, g, cols),
            )]
        }
        Op::Dropout { x, mask } => vec![(*x, g.iter().zip(mask).map(|(a, m)| a * m).collect())],
        Op::Concat { inputs, axis } => {
            let (outer, _, inner) = k::split_axis(out.shape(), *axis);
            let sizes: Vec<usize> = inputs.iter().map(|&i| val(i).shape()[*axis]).collect();
            let total: usize = sizes.iter().sum();
            let mut res: Vec<(NodeId, Vec<f64>)> = inputs
                .iter()
                .map(|&i| (i, Vec::with_capacity(val(i).numel())))
                .collect();
            for o in 0..outer {
                let mut off = o * total * inner;
                for (slot, &s) in res.iter_mut().zip(&sizes) {
                    slot.1.extend_from_slice(&g[off..off + s * inner]);
                    off += s * inner;
                }
            }
            res
        }
        Op::Narrow { x, axis, start } => {
            let in_shape = val(*x).shape();
            let (outer, len_in, inner) = k::split_axis(in_shape, *axis);
            let len = out.shape()[*axis];
            let mut gx = vec![0.0; val(*x).numel()];
            for o in 0..outer {
                let src = &g[o * len * inner..(o + 1) * len * inner];
                let dst = (o * len_in + start) * inner;
                gx[dst..dst + len * inner].copy_from_slice(src);
            }
            vec![(*x, gx)]
        }
        Op::Sum(x) => vec![(*x, vec![g[0]; val(*x).numel()])],
        Op::Mean(x) => {
            let n = val(*x).numel();
            vec![(*x, vec![g[0] / n as f64; n])]
        }
        Op::SumAxis { x, axis } => {
            let (outer, len, inner) = k::split_axis(val(*x).shape(), *axis);
            let mut gx = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                for _ in 0..len {
                    gx.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![(*x, gx)]
        }
        Op::ConvTime { x, w, dims } => {
            let (gx, gw) = k::conv_time_backward(val(*x).data(), val(*w).data(), g, *dims);
            vec![(*x, gx), (*w, gw)]
        }
        Op::ChannelMap { w, x } => {
            let xs = val(*x).shape();
            let ws = val(*w).shape();
            let inner = xs[2..].iter().product();
            let (gw, gx) = k::channel_map_backward(
                val(*w).data(),
                val(*x).data(),
                g,
                xs[0],
                ws[1],
                ws[0],
                inner,
            );
            vec![(*w, gw), (*x, gx)]
        }
        Op::Propagate { p, x } => {
            let xs = val(*x).shape();
            let (gp, gx) = k::propagate_backward(
                val(*p).data(),
                val(*p).rank() == 3,
                val(*x).data(),
                g,
                xs[0],
                xs[1],
                xs[2],
                xs[3],
            );
            vec![(*p, gp), (*x, gx)]
        }
        Op::PairwiseSqDist(x) => {
            let xs = val(*x).shape();
            vec![(
                *x,
                k::pairwise_sq_dist_backward(val(*x).data(), g, xs[0], xs[1], xs[2]),
            )]
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value(self.id).shape().to_vec()
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor {
        self.tape.value(self.id).clone()
    }

    pub fn item(&self) -> f64 {
        self.tape.value(self.id).item()
    }

    /// On a debug-checking tape, fails with [`Error::NonFinite`] naming
    /// `layer` if this value holds a NaN or infinity. A no-op otherwise.
    pub fn ensure_finite(&self, layer: &str) -> Result<Var<'t>> {
        if self.tape.debug_checks && !self.tape.value(self.id).is_finite() {
            return Err(Error::NonFinite {
                context: format!("output of {layer}"),
            });
        }
        Ok(*self)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(&[self.id])
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
    }

    fn unary_op(
        &self,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        op: impl FnOnce(NodeId) -> Op,
    ) -> Result<Var<'t>> {
        self.tape.check_finite(name, &[self.id])?;
        let value = self.tape.value(self.id).map(f);
        Ok(self.tape.record(op(self.id), &[self.id], value))
    }

    fn binary_op(
        &self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(NodeId, NodeId) -> Op,
    ) -> Result<Var<'t>> {
        self.same_tape(&other);
        self.tape.check_finite(name, &[self.id, other.id])?;
        let value = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(other.id);
            let shape = k::broadcast_shape(a.shape(), b.shape())
                .ok_or_else(|| Error::shape(name, format!("{:?} vs {:?}", a.shape(), b.shape())))?;
            let data = k::binary(&a, &b, &shape, f);
            Tensor::new(&shape, data)?
        };
        Ok(self
            .tape
            .record(op(self.id, other.id), &[self.id, other.id], value))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_op(other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_op(other, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_op(other, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary_op(other, "div", |a, b| a / b, Op::Div)
    }

    pub fn scale(&self, s: f64) -> Result<Var<'t>> {
        self.unary_op("scale", |x| x * s, |x| Op::Scale(x, s))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<'t>> {
        self.unary_op("add_scalar", |x| x + c, Op::AddScalar)
    }

    /// `1 − x`.
    pub fn one_minus(&self) -> Result<Var<'t>> {
        self.scale(-1.0)?.add_scalar(1.0)
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.unary_op("relu", |x| x.max(0.0), Op::Relu)
    }

    pub fn tanh(&self) -> Result<Var<'t>> {
        self.unary_op("tanh", f64::tanh, Op::Tanh)
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary_op("sigmoid", sigmoid, Op::Sigmoid)
    }

    pub fn abs(&self) -> Result<Var<'t>> {
        self.unary_op("abs", f64::abs, Op::Abs)
    }

    /// Matrix product over the last two axes; rank-2 operands broadcast
    /// across the batch of a rank-3 operand.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        self.tape.check_finite("matmul", &[self.id, other.id])?;
        let (value, dims) = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(other.id);
            let dims = MatmulDims::resolve(a.shape(), b.shape())?;
            let data = k::matmul(a.data(), b.data(), dims);
            (Tensor::new(&dims.out_shape(), data)?, dims)
        };
        Ok(self.tape.record(
            Op::MatMul(self.id, other.id, dims),
            &[self.id, other.id],
            value,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'t>> {
        let value = {
            let x = self.tape.value(self.id);
            let s = x.shape();
            if s.len() < 2 {
                return Err(Error::shape("transpose", format!("{s:?}")));
            }
            let mut shape = s.to_vec();
            shape.swap(s.len() - 1, s.len() - 2);
            Tensor::new(&shape, k::transpose_last(x.data(), s))?
        };
        Ok(self
            .tape
            .record(Op::TransposeLast(self.id), &[self.id], value))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self
            .tape
            .value(self.id)
            .reshape(shape)
            .map_err(|_| Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape())))?;
        Ok(self.tape.record(Op::Reshape(self.id), &[self.id], value))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Var<'t>> {
        self.tape.check_finite("softmax", &[self.id])?;
        let value = {
            let x = self.tape.value(self.id);
            let cols = *x
                .shape()
                .last()
                .ok_or_else(|| Error::shape("softmax", "scalar input"))?;
            Tensor::new(x.shape(), k::softmax_rows(x.data(), cols))?
        };
        Ok(self.tape.record(Op::Softmax(self.id), &[self.id], value))
    }

    /// Zero-mean, unit-variance normalization over the last axis, without
    /// affine parameters: `(x − μ) / sqrt(σ² + eps)`.
    pub fn layer_norm(&self, eps: f64) -> Result<Var<'t>> {
        self.tape.check_finite("layer_norm", &[self.id])?;
        let (value, inv_std) = {
            let x = self.tape.value(self.id);
            let cols = *x
                .shape()
                .last()
                .ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
            let (y, inv) = k::layer_norm_rows(x.data(), cols, eps);
            (Tensor::new(x.shape(), y)?, inv)
        };
        Ok(self.tape.record(
            Op::LayerNorm {
                x: self.id,
                inv_std,
            },
            &[self.id],
            value,
        ))
    }

    /// Inverted dropout. `rng == None` means evaluation mode and returns the
    /// input unchanged, as does `keep == 1`.
    pub fn dropout(&self, keep: f64, rng: Option<&mut RngState>) -> Result<Var<'t>> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::config("keep_prob", format!("{keep} not in (0, 1]")));
        }
        let Some(rng) = rng else { return Ok(*self) };
        if keep == 1.0 {
            return Ok(*self);
        }
        self.tape.check_finite("dropout", &[self.id])?;
        let (value, mask) = {
            let x = self.tape.value(self.id);
            let mask: Vec<f64> = (0..x.numel())
                .map(|_| {
                    if rng.next_f64() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect();
            let y = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
            (Tensor::new(x.shape(), y)?, mask)
        };
        Ok(self
            .tape
            .record(Op::Dropout { x: self.id, mask }, &[self.id], value))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let value = {
            let x = self.tape.value(self.id);
            let s = x.shape();
            if axis >= s.len() || start + len > s[axis] {
                return Err(Error::shape(
                    "narrow",
                    format!("[{start}, {}) on axis {axis} of {s:?}", start + len),
                ));
            }
            let (outer, len_in, inner) = k::split_axis(s, axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let from = (o * len_in + start) * inner;
                data.extend_from_slice(&x.data()[from..from + len * inner]);
            }
            let mut shape = s.to_vec();
            shape[axis] = len;
            Tensor::new(&shape, data)?
        };
        Ok(self.tape.record(
            Op::Narrow {
                x: self.id,
                axis,
                start,
            },
            &[self.id],
            value,
        ))
    }

    /// The trailing `len` entries along `axis`.
    pub fn keep_last(&self, axis: usize, len: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        if axis >= shape.len() || len > shape[axis] {
            return Err(Error::shape(
                "keep_last",
                format!("{len} along axis {axis} of {shape:?}"),
            ));
        }
        if len == shape[axis] {
            return Ok(*self);
        }
        self.narrow(axis, shape[axis] - len, len)
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        let value = Tensor::scalar(self.tape.value(self.id).sum());
        Ok(self.tape.record(Op::Sum(self.id), &[self.id], value))
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let value = {
            let x = self.tape.value(self.id);
            Tensor::scalar(x.sum() / x.numel() as f64)
        };
        Ok(self.tape.record(Op::Mean(self.id), &[self.id], value))
    }

    /// Sum over `axis`, keeping it with length 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        let value = {
            let x = self.tape.value(self.id);
            let s = x.shape();
            if axis >= s.len() {
                return Err(Error::shape("sum_axis", format!("axis {axis} of {s:?}")));
            }
            let (outer, len, inner) = k::split_axis(s, axis);
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    let src = &x.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                    for (d, v) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *d += v;
                    }
                }
            }
            let mut shape = s.to_vec();
            shape[axis] = 1;
            Tensor::new(&shape, data)?
        };
        Ok(self
            .tape
            .record(Op::SumAxis { x: self.id, axis }, &[self.id], value))
    }

    /// Dilated causal filter along the time axis of `self: B×C_in×N×T` with
    /// `weight: C_out×C_in×k`. Output length is `T − dilation·(k−1)`.
    pub fn conv_time(&self, weight: Var<'t>, dilation: usize) -> Result<Var<'t>> {
        self.same_tape(&weight);
        self.tape.check_finite("conv_time", &[self.id, weight.id])?;
        let (value, dims) = {
            let x = self.tape.value(self.id);
            let w = self.tape.value(weight.id);
            let (xs, ws) = (x.shape(), w.shape());
            if xs.len() != 4 || ws.len() != 3 || xs[1] != ws[1] || dilation == 0 {
                return Err(Error::shape(
                    "conv_time",
                    format!("input {xs:?}, weight {ws:?}, dilation {dilation}"),
                ));
            }
            let dims = ConvDims {
                batch: xs[0],
                c_in: xs[1],
                c_out: ws[0],
                nodes: xs[2],
                t_in: xs[3],
                kernel: ws[2],
                dilation,
            };
            if dims.t_in <= dims.span() {
                return Err(Error::shape(
                    "conv_time",
                    format!(
                        "time length {} too short; kernel {} at dilation {dilation} needs at least {}",
                        dims.t_in,
                        dims.kernel,
                        dims.span() + 1
                    ),
                ));
            }
            let shape = [dims.batch, dims.c_out, dims.nodes, dims.t_out()];
            (
                Tensor::new(&shape, k::conv_time(x.data(), w.data(), dims))?,
                dims,
            )
        };
        Ok(self.tape.record(
            Op::ConvTime {
                x: self.id,
                w: weight.id,
                dims,
            },
            &[self.id, weight.id],
            value,
        ))
    }

    /// 1×1 convolution over the channel axis of `self: B×C_in×…` with
    /// `weight: C_out×C_in`.
    pub fn channel_map(&self, weight: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&weight);
        self.tape
            .check_finite("channel_map", &[self.id, weight.id])?;
        let value = {
            let x = self.tape.value(self.id);
            let w = self.tape.value(weight.id);
            let (xs, ws) = (x.shape(), w.shape());
            if xs.len() < 2 || ws.len() != 2 || xs[1] != ws[1] {
                return Err(Error::shape(
                    "channel_map",
                    format!("input {xs:?}, weight {ws:?}"),
                ));
            }
            let inner: usize = xs[2..].iter().product();
            let mut shape = xs.to_vec();
            shape[1] = ws[0];
            Tensor::new(
                &shape,
                k::channel_map(w.data(), x.data(), xs[0], ws[1], ws[0], inner),
            )?
        };
        Ok(self.tape.record(
            Op::ChannelMap {
                w: weight.id,
                x: self.id,
            },
            &[weight.id, self.id],
            value,
        ))
    }

    /// Mixes `self: B×C×N×T` along the node axis: `y = P·x` per sample and
    /// channel. `p` is `N×N` (shared) or `B×N×N` (per sample).
    pub fn propagate(&self, p: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&p);
        self.tape.check_finite("propagate", &[self.id, p.id])?;
        let value = {
            let x = self.tape.value(self.id);
            let pm = self.tape.value(p.id);
            let (xs, ps) = (x.shape(), pm.shape());
            let ok = xs.len() == 4
                && match ps.len() {
                    2 => ps[0] == xs[2] && ps[1] == xs[2],
                    3 => ps[0] == xs[0] && ps[1] == xs[2] && ps[2] == xs[2],
                    _ => false,
                };
            if !ok {
                return Err(Error::shape(
                    "propagate",
                    format!("features {xs:?}, transition {ps:?}"),
                ));
            }
            Tensor::new(
                xs,
                k::propagate(
                    pm.data(),
                    ps.len() == 3,
                    x.data(),
                    xs[0],
                    xs[1],
                    xs[2],
                    xs[3],
                ),
            )?
        };
        Ok(self.tape.record(
            Op::Propagate {
                p: p.id,
                x: self.id,
            },
            &[p.id, self.id],
            value,
        ))
    }

    /// `B×N×h → B×N×N` squared Euclidean distances between node rows.
    pub fn pairwise_sq_dist(&self) -> Result<Var<'t>> {
        self.tape.check_finite("pairwise_sq_dist", &[self.id])?;
        let value = {
            let x = self.tape.value(self.id);
            let s = x.shape();
            if s.len() != 3 {
                return Err(Error::shape("pairwise_sq_dist", format!("{s:?}")));
            }
            Tensor::new(
                &[s[0], s[1], s[1]],
                k::pairwise_sq_dist(x.data(), s[0], s[1], s[2]),
            )?
        };
        Ok(self
            .tape
            .record(Op::PairwiseSqDist(self.id), &[self.id], value))
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
