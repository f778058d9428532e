//! Reverse-mode automatic differentiation over a closed set of tensor primitives.
//!
//! A [`Graph`] is built symbolically: inputs are declared by name and shape,
//! then primitives are recorded in topological order. [`Graph::forward`]
//! replays the recording against bound input tensors and [`Graph::backward`]
//! propagates a scalar seed back to every gradient-carrying input.
//!
//! The primitive set is fixed:
//! elementwise add/sub/mul (with trailing or scalar broadcast of the right
//! operand), scalar scale, 2D matrix multiply, strided 2D cross-correlation
//! with a fixed kernel, pointwise nonlinearities ([`Unary`] and the unsigned
//! orientation [`BinaryOp::Atan2Unsigned`]), full and per-axis sum, mean,
//! slice, concatenate, bilinear resize, reshape and axis permutation.
//!
//! Reductions always accumulate in index order, so results are bit-identical
//! between runs.

mod gradcheck;
mod kernels;

use std::collections::BTreeMap;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, InputCheck};

use crate::error::{Error, Result};
use crate::tensor::{numel, Element, Tensor};

/// Handle to a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    /// `atan2(lhs, rhs)` folded into `[0, π)`; lhs is the vertical component.
    Atan2Unsigned,
}

/// Pointwise nonlinearities. Constants are stored as `f64` and converted on use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Square,
    Sqrt,
    Recip,
    Tanh,
    Silu,
    Offset(f64),
    ClampMax(f64),
    /// Periodic triangular window `max(0, 1 - dist(x, center) / half_width)`
    /// where `dist` is measured modulo `period`.
    Tent {
        center: f64,
        half_width: f64,
        period: f64,
    },
}

#[derive(Debug, Clone)]
pub enum Op<T: Element> {
    Input { name: String },
    Binary { op: BinaryOp, lhs: NodeId, rhs: NodeId },
    Scale { x: NodeId, factor: T },
    Unary { x: NodeId, f: Unary },
    MatMul { a: NodeId, b: NodeId },
    Conv2d { x: NodeId, kernel: Tensor<T>, stride: [usize; 2] },
    Sum { x: NodeId },
    Mean { x: NodeId },
    SumAxis { x: NodeId, axis: usize },
    Slice { x: NodeId, axis: usize, start: usize, len: usize },
    Concat { parts: Vec<NodeId>, axis: usize },
    Resize { x: NodeId, height: usize, width: usize },
    Reshape { x: NodeId },
    Permute { x: NodeId, axes: Vec<usize> },
}

impl<T: Element> Op<T> {
    fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Input { .. } => Vec::new(),
            Op::Binary { lhs, rhs, .. } | Op::MatMul { a: lhs, b: rhs } => vec![*lhs, *rhs],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Scale { x, .. }
            | Op::Unary { x, .. }
            | Op::Conv2d { x, .. }
            | Op::Sum { x }
            | Op::Mean { x }
            | Op::SumAxis { x, .. }
            | Op::Slice { x, .. }
            | Op::Resize { x, .. }
            | Op::Reshape { x }
            | Op::Permute { x, .. } => vec![*x],
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T: Element> {
    op: Op<T>,
    shape: Vec<usize>,
    requires_grad: bool,
}

/// A recorded computation. Immutable once built; share freely across threads.
#[derive(Debug, Clone, Default)]
pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    inputs: BTreeMap<String, NodeId>,
    outputs: BTreeMap<String, NodeId>,
}

/// Materialized value of every node after [`Graph::forward`].
#[derive(Debug, Clone)]
pub struct Values<T: Element> {
    tensors: Vec<Tensor<T>>,
    outputs: BTreeMap<String, NodeId>,
}

impl<T: Element> Values<T> {
    pub fn get(&self, id: NodeId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn output(&self, name: &str) -> Option<&Tensor<T>> {
        self.outputs.get(name).map(|id| &self.tensors[id.0])
    }

    /// Named outputs registered with [`Graph::mark_output`].
    pub fn outputs(&self) -> BTreeMap<String, Tensor<T>> {
        self.outputs
            .iter()
            .map(|(k, id)| (k.clone(), self.tensors[id.0].clone()))
            .collect()
    }
}

/// Gradients of a scalar seed with respect to every gradient-carrying input.
pub type Gradients<T> = BTreeMap<String, Tensor<T>>;

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn input_id(&self, name: &str) -> Option<NodeId> {
        self.inputs.get(name).copied()
    }

    /// Names of inputs that receive gradients, in sorted order.
    pub fn grad_inputs(&self) -> Vec<String> {
        self.inputs
            .iter()
            .filter(|(_, id)| self.nodes[id.0].requires_grad)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn mark_output(&mut self, name: impl Into<String>, id: NodeId) {
        self.outputs.insert(name.into(), id);
    }

    pub fn output_id(&self, name: &str) -> Option<NodeId> {
        self.outputs.get(name).copied()
    }

    fn next_id(&self) -> usize {
        self.nodes.len()
    }

    fn shape_err(&self, detail: impl Into<String>) -> Error {
        Error::NodeShape {
            node: self.next_id(),
            detail: detail.into(),
        }
    }

    fn push(&mut self, op: Op<T>, shape: Vec<usize>) -> NodeId {
        let requires_grad = op
            .operands()
            .iter()
            .any(|id| self.nodes[id.0].requires_grad);
        self.push_with(op, shape, requires_grad)
    }

    fn push_with(&mut self, op: Op<T>, shape: Vec<usize>, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            shape,
            requires_grad,
        });
        id
    }

    fn declare(&mut self, name: &str, shape: Vec<usize>, requires_grad: bool) -> Result<NodeId> {
        if self.inputs.contains_key(name) {
            return Err(Error::invalid(format!("input `{name}` declared twice")));
        }
        let id = self.push_with(
            Op::Input {
                name: name.to_owned(),
            },
            shape,
            requires_grad,
        );
        self.inputs.insert(name.to_owned(), id);
        Ok(id)
    }

    /// Declares an input that receives a gradient.
    pub fn input(&mut self, name: &str, shape: impl Into<Vec<usize>>) -> Result<NodeId> {
        self.declare(name, shape.into(), true)
    }

    /// Declares a data input excluded from differentiation.
    pub fn constant(&mut self, name: &str, shape: impl Into<Vec<usize>>) -> Result<NodeId> {
        self.declare(name, shape.into(), false)
    }

    fn binary(&mut self, op: BinaryOp, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        let ls = self.shape(lhs).to_vec();
        let rs = self.shape(rhs);
        let ok = match op {
            BinaryOp::Atan2Unsigned => ls == rs,
            _ => kernels::broadcastable(&ls, rs),
        };
        if !ok {
            return Err(self.shape_err(format!("{op:?} of {ls:?} and {rs:?}")));
        }
        Ok(self.push(Op::Binary { op, lhs, rhs }, ls))
    }

    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Add, lhs, rhs)
    }

    pub fn sub(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Sub, lhs, rhs)
    }

    pub fn mul(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Mul, lhs, rhs)
    }

    pub fn atan2_unsigned(&mut self, y: NodeId, x: NodeId) -> Result<NodeId> {
        self.binary(BinaryOp::Atan2Unsigned, y, x)
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::Scale { x, factor }, shape)
    }

    pub fn unary(&mut self, x: NodeId, f: Unary) -> NodeId {
        let shape = self.shape(x).to_vec();
        self.push(Op::Unary { x, f }, shape)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Unary::Square)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            let d = format!("matmul of {sa:?} and {sb:?}");
            return Err(self.shape_err(d));
        }
        let shape = vec![sa[0], sb[1]];
        Ok(self.push(Op::MatMul { a, b }, shape))
    }

    /// Valid (unpadded) cross-correlation over the last two axes.
    pub fn conv2d(&mut self, x: NodeId, kernel: Tensor<T>, stride: [usize; 2]) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        let ks = kernel.shape();
        if s.len() < 2 || ks.len() != 2 || stride[0] == 0 || stride[1] == 0 {
            let d = format!("conv2d of {s:?} with kernel {ks:?} stride {stride:?}");
            return Err(self.shape_err(d));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        if h < ks[0] || w < ks[1] {
            let d = format!("conv2d input {h}x{w} smaller than kernel {ks:?}");
            return Err(self.shape_err(d));
        }
        let mut shape = s.clone();
        let r = shape.len();
        shape[r - 2] = (h - ks[0]) / stride[0] + 1;
        shape[r - 1] = (w - ks[1]) / stride[1] + 1;
        Ok(self.push(Op::Conv2d { x, kernel, stride }, shape))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum { x }, Vec::new())
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean { x }, Vec::new())
    }

    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let mut shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            let d = format!("sum over axis {axis} of {shape:?}");
            return Err(self.shape_err(d));
        }
        shape.remove(axis);
        Ok(self.push(Op::SumAxis { x, axis }, shape))
    }

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let mut shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            let d = format!("slice axis {axis} [{start}, +{len}) of {shape:?}");
            return Err(self.shape_err(d));
        }
        shape[axis] = len;
        Ok(self.push(Op::Slice { x, axis, start, len }, shape))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(self.shape_err("concat of zero parts"));
        };
        let mut shape = self.shape(first).to_vec();
        if axis >= shape.len() {
            let d = format!("concat along axis {axis} of {shape:?}");
            return Err(self.shape_err(d));
        }
        let mut total = 0;
        for &p in parts {
            let ps = self.shape(p);
            let compatible = ps.len() == shape.len()
                && ps
                    .iter()
                    .zip(&shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                let d = format!("concat of {shape:?} and {ps:?} along axis {axis}");
                return Err(self.shape_err(d));
            }
            total += ps[axis];
        }
        shape[axis] = total;
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            shape,
        ))
    }

    /// Bilinear resize of the last two axes (half-pixel centers, edge clamp).
    pub fn resize(&mut self, x: NodeId, height: usize, width: usize) -> Result<NodeId> {
        let mut shape = self.shape(x).to_vec();
        let r = shape.len();
        if r < 2 || height == 0 || width == 0 {
            let d = format!("resize of {shape:?} to {height}x{width}");
            return Err(self.shape_err(d));
        }
        shape[r - 2] = height;
        shape[r - 1] = width;
        Ok(self.push(Op::Resize { x, height, width }, shape))
    }

    pub fn reshape(&mut self, x: NodeId, shape: impl Into<Vec<usize>>) -> Result<NodeId> {
        let shape = shape.into();
        if numel(&shape) != numel(self.shape(x)) {
            let d = format!("reshape {:?} into {shape:?}", self.shape(x));
            return Err(self.shape_err(d));
        }
        Ok(self.push(Op::Reshape { x }, shape))
    }

    pub fn permute(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        let valid = axes.len() == s.len()
            && axes
                .iter()
                .all(|&a| a < s.len() && !std::mem::replace(&mut seen[a], true));
        if !valid {
            let d = format!("permute {s:?} by {axes:?}");
            return Err(self.shape_err(d));
        }
        let shape = axes.iter().map(|&a| s[a]).collect();
        Ok(self.push(
            Op::Permute {
                x,
                axes: axes.to_vec(),
            },
            shape,
        ))
    }

    /// Replays the graph with inputs looked up by name.
    pub fn forward_with<'a>(
        &self,
        mut lookup: impl FnMut(&str) -> Option<&'a Tensor<T>>,
    ) -> Result<Values<T>> {
        let mut tensors: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let value = match &node.op {
                Op::Input { name } => {
                    let t = lookup(name).ok_or_else(|| Error::UnboundInput(name.clone()))?;
                    if t.shape() != node.shape.as_slice() {
                        return Err(Error::NodeShape {
                            node: i,
                            detail: format!(
                                "input `{name}` bound with shape {:?}, declared {:?}",
                                t.shape(),
                                node.shape
                            ),
                        });
                    }
                    if !t.all_finite() {
                        return Err(Error::NonFinite(format!("input `{name}`")));
                    }
                    t.clone()
                }
                op => kernels::forward(op, &node.shape, &tensors),
            };
            tensors.push(value);
        }
        Ok(Values {
            tensors,
            outputs: self.outputs.clone(),
        })
    }

    pub fn forward(&self, inputs: &BTreeMap<String, Tensor<T>>) -> Result<Values<T>> {
        self.forward_with(|name| inputs.get(name))
    }

    /// Gradients of the scalar node `seed` with respect to every gradient input.
    pub fn backward(&self, values: &Values<T>, seed: NodeId) -> Result<Gradients<T>> {
        if numel(self.shape(seed)) != 1 {
            return Err(Error::invalid(format!(
                "backward seed node {} has shape {:?}, expected a scalar",
                seed.0,
                self.shape(seed)
            )));
        }
        if values.tensors.len() != self.nodes.len() {
            return Err(Error::invalid("values do not belong to this graph"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; seed.0 + 1];
        if self.nodes[seed.0].requires_grad {
            grads[seed.0] = Some(Tensor::full(self.shape(seed).to_vec(), T::one()));
        }
        for i in (0..=seed.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Input { .. }) {
                continue;
            }
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            let contributions = kernels::backward(
                &node.op,
                &upstream,
                &values.tensors[i],
                &values.tensors,
                |id: NodeId| self.nodes[id.0].requires_grad,
            );
            for (id, g) in contributions {
                match &mut grads[id.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a = *a + *b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }
        let mut out = BTreeMap::new();
        for (name, id) in &self.inputs {
            if !self.nodes[id.0].requires_grad {
                continue;
            }
            let g = grads
                .get_mut(id.0)
                .and_then(Option::take)
                .unwrap_or_else(|| Tensor::zeros(self.shape(*id).to_vec()));
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}
