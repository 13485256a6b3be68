use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{DiffError, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    },
    Conv1dTime {
        x: Var,
        w: Var,
    },
    GatherRows {
        x: Var,
        idx: Arc<[usize]>,
    },
    SegmentSum {
        x: Var,
        seg: Arc<[usize]>,
    },
    MeanOverAxes {
        x: Var,
        axes: Vec<usize>,
    },
    Sum(Var),
    Reshape(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Arc<[usize]>,
    },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Gelu(_) => "gelu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Conv1dTime { .. } => "conv1d_time",
            Op::GatherRows { .. } => "gather_rows",
            Op::SegmentSum { .. } => "segment_sum",
            Op::MeanOverAxes { .. } => "mean_over_axes",
            Op::Sum(_) => "sum",
            Op::Reshape(_) => "reshape",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }

    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Conv1dTime { x, w } => vec![*x, *w],
            Op::Scale(x, _)
            | Op::Gelu(x)
            | Op::GatherRows { x, .. }
            | Op::SegmentSum { x, .. }
            | Op::MeanOverAxes { x, .. }
            | Op::Sum(x)
            | Op::Reshape(x) => vec![*x],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

pub(crate) struct Node<F> {
    pub(crate) value: Tensor<F>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Ordered record of a forward computation. Nodes only ever reference
/// earlier nodes, so the record is topologically sorted by construction.
pub struct Tape<F> {
    pub(crate) nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input value. Gradients are reported only for leaves with
    /// `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Appends an op result. The op is recorded only if an input needs
    /// gradients; otherwise the result is stored as a constant.
    pub(crate) fn push(&mut self, value: Tensor<F>, op: Op) -> Result<Var> {
        let node = self.nodes.len();
        if !value.is_finite() {
            return Err(DiffError::NonFinite {
                op: op.name(),
                node,
            });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(node))
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(DiffError::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..=loss.0).map(|_| None).collect();
        let mut out = BTreeMap::new();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads: out });
        }
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), F::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                if node.requires_grad {
                    out.insert(Var(i), g);
                }
                continue;
            }
            self.backprop(&node.op, g, &mut grads)?;
        }
        Ok(Gradients { grads: out })
    }

    /// Adds `g` into the gradient slot of `v` when `v` takes part in
    /// differentiation.
    pub(crate) fn accumulate(&self, grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }
}

/// Gradients of leaves that require them, keyed by handle.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    grads: BTreeMap<Var, Tensor<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(&v)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
