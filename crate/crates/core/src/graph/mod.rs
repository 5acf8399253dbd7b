//! Reverse-mode autodiff over a per-step tape.
//!
//! A [`Graph`] is built fresh for every forward pass: leaves are constants,
//! gradient-tracked inputs, or parameters pulled from a
//! [`ParamStore`](crate::params::ParamStore); every op pushes one node whose
//! value is computed eagerly. [`Graph::backward`] runs one reverse sweep in
//! tape order, accumulating gradients additively across fan-out.

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod reduce;
mod resize;
mod shapeops;
mod spectral_ops;

pub use shapeops::TokenMode;

/// Sum a gradient tensor down to a broadcast source's shape.
pub(crate) fn reduce_grad<T: Scalar>(t: &Tensor<T>, target: Shape) -> Tensor<T> {
    elementwise::reduce_to_shape(t, target)
}

use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::shape::Shape;
use crate::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(pub(crate) usize);

/// Backward rule of one op. `needs[i]` tells which input gradients are
/// actually consumed, so implementations may skip dead branches.
pub(crate) trait GradFn<T: Scalar>: Send + Sync {
    fn backward(&self, ctx: &Ctx<'_, T>, grad_out: &Tensor<T>, needs: &[bool])
        -> Vec<Option<Tensor<T>>>;
}

/// View of a node's inputs and output during the backward sweep.
pub(crate) struct Ctx<'a, T: Scalar> {
    graph: &'a Graph<T>,
    node: usize,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn input(&self, i: usize) -> &Tensor<T> {
        let id = self.graph.nodes[self.node].inputs[i];
        &self.graph.nodes[id.0].value
    }

    pub fn output(&self) -> &Tensor<T> {
        &self.graph.nodes[self.node].value
    }

    pub fn n_inputs(&self) -> usize {
        self.graph.nodes[self.node].inputs.len()
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    inputs: Vec<NodeId>,
    grad_fn: Option<Box<dyn GradFn<T>>>,
    param: Option<ParamId>,
    needs_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient (input images, masks, ...).
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push_leaf(value, false, None)
    }

    /// Gradient-tracked leaf that is not a parameter (gradcheck inputs).
    pub fn var(&mut self, value: Tensor<T>) -> NodeId {
        self.push_leaf(value, true, None)
    }

    /// Leaf bound to a stored parameter; `backward` gradients can be
    /// written back with [`Graph::accumulate_param_grads`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        self.push_leaf(store.value(id).clone(), true, Some(id))
    }

    fn push_leaf(&mut self, value: Tensor<T>, needs_grad: bool, param: Option<ParamId>) -> NodeId {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            grad_fn: None,
            param,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub(crate) fn push_op(
        &mut self,
        value: Tensor<T>,
        inputs: Vec<NodeId>,
        grad_fn: Box<dyn GradFn<T>>,
    ) -> NodeId {
        let needs_grad = inputs.iter().any(|id| self.nodes[id.0].needs_grad);
        self.nodes.push(Node {
            value,
            inputs,
            grad_fn: if needs_grad { Some(grad_fn) } else { None },
            param: None,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    #[inline]
    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    /// Reverse sweep from a scalar loss. Panics if `loss` is not a
    /// declared scalar of shape (1,1,1,1).
    pub fn backward(&self, loss: NodeId) -> Grads<T> {
        assert!(
            self.shape(loss).is_scalar(),
            "backward requires a scalar loss, got shape {}",
            self.shape(loss)
        );
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(grad_fn) = node.grad_fn.as_ref() else {
                continue;
            };
            let Some(grad_out) = grads[i].clone() else {
                continue;
            };
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|id| self.nodes[id.0].needs_grad)
                .collect();
            let ctx = Ctx { graph: self, node: i };
            let input_grads = grad_fn.backward(&ctx, &grad_out, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (k, gi) in input_grads.into_iter().enumerate() {
                let Some(gi) = gi else { continue };
                let j = node.inputs[k].0;
                debug_assert_eq!(
                    gi.shape(),
                    self.nodes[j].value.shape(),
                    "gradient shape mismatch flowing into node {}",
                    j
                );
                match &mut grads[j] {
                    Some(acc) => *acc = acc.add(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Grads { by_node: grads }
    }

    /// Add parameter-leaf gradients into the store's grad slots.
    pub fn accumulate_param_grads(&self, grads: &Grads<T>, store: &mut ParamStore<T>) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Some(pid), Some(g)) = (node.param, grads.by_node[i].as_ref()) {
                store.accumulate_grad(pid, g);
            }
        }
    }
}

/// Gradients per node produced by one backward sweep.
pub struct Grads<T: Scalar> {
    by_node: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.by_node[id.0].as_ref()
    }
}
