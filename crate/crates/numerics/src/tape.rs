//! Reverse-mode differentiation tape.
//!
//! Every operation appends one node holding its output value. Nodes whose
//! inputs require gradients also keep the data their backward rule needs.
//! [`Tape::backward`] walks the nodes once in reverse insertion order, which
//! is a valid reverse topological order because inputs always precede outputs.

use std::cell::{Cell, Ref, RefCell};

use crate::error::{NumericsError, Result};
use crate::ops::conv::ConvGeom;
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Differentiable operation families, used for reporting and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    MatMul,
    Transpose,
    Reshape,
    Add,
    Sub,
    Mul,
    Scale,
    AddBiasRows,
    AddBiasChannels,
    Relu,
    Sigmoid,
    Clamp,
    Sum,
    Mean,
    Softmax,
    LayerNorm,
    Concat,
    MaskedMax,
    Scatter,
    Conv2d,
    ConvTranspose2x2,
    Upsample2x,
    BilinearSample,
    FocalLoss,
    L1Masked,
}

impl OpKind {
    pub const ALL: [OpKind; 25] = [
        OpKind::MatMul,
        OpKind::Transpose,
        OpKind::Reshape,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::AddBiasRows,
        OpKind::AddBiasChannels,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Clamp,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Softmax,
        OpKind::LayerNorm,
        OpKind::Concat,
        OpKind::MaskedMax,
        OpKind::Scatter,
        OpKind::Conv2d,
        OpKind::ConvTranspose2x2,
        OpKind::Upsample2x,
        OpKind::BilinearSample,
        OpKind::FocalLoss,
        OpKind::L1Masked,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Reshape => "reshape",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::AddBiasRows => "add_bias_rows",
            OpKind::AddBiasChannels => "add_bias_channels",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Clamp => "clamp",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Softmax => "softmax",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Concat => "concat",
            OpKind::MaskedMax => "masked_max",
            OpKind::Scatter => "scatter_to_grid",
            OpKind::Conv2d => "conv2d",
            OpKind::ConvTranspose2x2 => "conv_transpose2x2",
            OpKind::Upsample2x => "upsample_nearest2x",
            OpKind::BilinearSample => "bilinear_sample",
            OpKind::FocalLoss => "focal_loss",
            OpKind::L1Masked => "l1_masked",
        }
    }
}

/// Recorded operation with the inputs and saved state its backward rule needs.
pub(crate) enum Op<T: Scalar> {
    Leaf,
    Const,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Transpose { x: Var, rows: usize, cols: usize },
    Reshape { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: T },
    AddBiasRows { x: Var, b: Var },
    AddBiasChannels { x: Var, b: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    Clamp { x: Var, lo: T, hi: T },
    Sum { x: Var },
    Mean { x: Var },
    Softmax { x: Var, outer: usize, len: usize, inner: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Concat { inputs: Vec<Var> },
    MaskedMax { x: Var, argmax: Vec<usize> },
    Scatter { x: Var, cells: Vec<usize>, plane: usize },
    Conv2d { x: Var, w: Var, geom: ConvGeom, cols: Vec<T> },
    ConvTranspose2x2 { x: Var, w: Var, c: usize, f: usize, h: usize, w_in: usize },
    Upsample2x { x: Var, c: usize, h: usize, w: usize },
    BilinearSample { x: Var, taps: Vec<[(usize, T); 4]>, channels: usize, plane: usize },
    FocalLoss { pred: Var, target: Vec<T>, norm: T },
    L1Masked { pred: Var, target: Vec<T>, mask: Vec<bool>, channels: usize, norm: T },
}

impl<T: Scalar> Op<T> {
    pub(crate) fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf | Op::Const => return None,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Transpose { .. } => OpKind::Transpose,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Add { .. } => OpKind::Add,
            Op::Sub { .. } => OpKind::Sub,
            Op::Mul { .. } => OpKind::Mul,
            Op::Scale { .. } => OpKind::Scale,
            Op::AddBiasRows { .. } => OpKind::AddBiasRows,
            Op::AddBiasChannels { .. } => OpKind::AddBiasChannels,
            Op::Relu { .. } => OpKind::Relu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Clamp { .. } => OpKind::Clamp,
            Op::Sum { .. } => OpKind::Sum,
            Op::Mean { .. } => OpKind::Mean,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Concat { .. } => OpKind::Concat,
            Op::MaskedMax { .. } => OpKind::MaskedMax,
            Op::Scatter { .. } => OpKind::Scatter,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::ConvTranspose2x2 { .. } => OpKind::ConvTranspose2x2,
            Op::Upsample2x { .. } => OpKind::Upsample2x,
            Op::BilinearSample { .. } => OpKind::BilinearSample,
            Op::FocalLoss { .. } => OpKind::FocalLoss,
            Op::L1Masked { .. } => OpKind::L1Masked,
        })
    }
}

pub(crate) struct Node<T: Scalar> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Ordered record of operations for one forward pass.
///
/// A tape is confined to a single thread. An inference tape
/// ([`Tape::inference`]) stores values only and never records backward state.
pub struct Tape<T: Scalar = f32> {
    pub(crate) nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
    fault: Cell<Option<OpKind>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), recording: true, fault: Cell::new(None) }
    }

    pub fn inference() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), recording: false, fault: Cell::new(None) }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Test hook: doubles the upstream gradient fed to every backward rule of
    /// `kind`, producing deliberately wrong gradients.
    #[doc(hidden)]
    pub fn inject_fault(&self, kind: Option<OpKind>) {
        self.fault.set(kind);
    }

    /// Adds an input tensor. `requires_grad` marks it as a differentiation target.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(NumericsError::NonFinite { op: "leaf" });
        }
        let op = if requires_grad && self.recording { Op::Leaf } else { Op::Const };
        let rg = requires_grad && self.recording;
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad: rg });
        Ok(Var(nodes.len() - 1))
    }

    pub fn constant(&self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Copies a node's value out of the tape.
    pub fn snapshot(&self, v: Var) -> Tensor<T> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub(crate) fn push(&self, value: Tensor<T>, op: Op<T>, inputs: &[Var], name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(NumericsError::NonFinite { op: name });
        }
        let mut nodes = self.nodes.borrow_mut();
        let rg = self.recording && inputs.iter().any(|v| nodes[v.0].requires_grad);
        let op = if rg { op } else { Op::Const };
        nodes.push(Node { value, op, requires_grad: rg });
        Ok(Var(nodes.len() - 1))
    }

    /// Reverse-mode pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(NumericsError::Usage(format!("backward needs a scalar loss, got shape {shape:?}")));
        }
        self.backward_with_seed(loss, Tensor::full(shape, T::one()))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `output`) back
    /// to every leaf.
    pub fn backward_with_seed(&self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[output.0];
        if root.value.shape() != seed.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "backward",
                lhs: root.value.shape().to_vec(),
                rhs: seed.shape().to_vec(),
            });
        }
        let loss = output;
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(seed);
        let fault = self.fault.get();
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(mut g) = grads[i].take() else { continue };
            if fault.is_some() && node.op.kind() == fault {
                for v in g.data_mut() {
                    *v = *v + *v;
                }
            }
            let mut sink = GradSink { grads: &mut grads, nodes: &nodes };
            crate::ops::backward_node(&node.op, node, g.data(), &mut sink);
        }
        Ok(Gradients { grads })
    }
}

/// Accumulates gradient contributions into input nodes.
pub(crate) struct GradSink<'a, T: Scalar> {
    grads: &'a mut [Option<Tensor<T>>],
    nodes: &'a [Node<T>],
}

impl<'a, T: Scalar> GradSink<'a, T> {
    pub(crate) fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn value(&self, v: Var) -> &'a Tensor<T> {
        let nodes: &'a [Node<T>] = self.nodes;
        &nodes[v.0].value
    }

    /// Gradient buffer of `v`, zero-initialized on first use.
    pub(crate) fn slot(&mut self, v: Var) -> &mut [T] {
        let shape = self.nodes[v.0].value.shape();
        self.grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.to_vec())).data_mut()
    }

    pub(crate) fn add(&mut self, v: Var, contrib: &[T]) {
        if !self.wants(v) {
            return;
        }
        let slot = self.slot(v);
        for (s, c) in slot.iter_mut().zip(contrib) {
            *s += *c;
        }
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T: Scalar = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf; `None` when the leaf did not influence the loss
    /// or does not require gradients.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
