//! Reverse-mode gradient tape.
//!
//! Every op appends a node holding its output value and, when any input
//! participates in differentiation, a closure-like [`BackwardOp`] that maps the
//! output gradient to input gradients. Nodes are stored in creation order, so
//! the reverse of that order is a valid topological order for backpropagation.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Whether stochastic and batch-statistic layers run in training or inference form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) trait BackwardOp {
    fn inputs(&self) -> Vec<Var>;

    /// Gradients for each entry of `inputs()`, in the same order. `None`
    /// means the op contributes nothing to that input.
    fn backward(&self, tape: &Tape, out: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Option<Box<dyn BackwardOp>>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, false, None)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_node(value, true, None)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor, op: impl BackwardOp + 'static) -> Var {
        let requires_grad = op.inputs().iter().any(|&v| self.requires_grad(v));
        if requires_grad {
            self.push_node(value, true, Some(Box::new(op)))
        } else {
            self.push_node(value, false, None)
        }
    }

    fn push_node(&mut self, value: Tensor, requires_grad: bool, op: Option<Box<dyn BackwardOp>>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Backpropagates from a scalar `loss`.
    ///
    /// Afterwards every node with `requires_grad` holds a gradient of its own
    /// shape; nodes the loss does not depend on get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut acc: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.requires_grad(loss) {
            acc[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(op) = node.op.as_ref() else { continue };
            let Some(grad) = acc[idx].as_ref() else { continue };
            let inputs = op.inputs();
            let input_grads = op.backward(self, &node.value, grad);
            debug_assert_eq!(inputs.len(), input_grads.len());
            for (input, g) in inputs.into_iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.len(), self.nodes[input.0].value.len());
                match &mut acc[input.0] {
                    Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(g),
                }
            }
        }
        self.grads = self
            .nodes
            .iter()
            .zip(acc)
            .map(|(node, g)| {
                node.requires_grad.then(|| {
                    let data = g.unwrap_or_else(|| vec![0.0; node.value.len()]);
                    Tensor::new(node.value.shape().to_vec(), data).expect("gradient shape")
                })
            })
            .collect();
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}
