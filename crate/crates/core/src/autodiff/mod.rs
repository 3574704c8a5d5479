//! Reverse-mode automatic differentiation on a define-by-run tape.
//!
//! A [`Graph`] records every operation of one forward pass in topological
//! order: node values live in an arena, each op keeps a backward closure that
//! routes upstream gradients to its inputs. The graph is rebuilt on every
//! forward pass, which keeps recurrent unrolling trivial. Tensors registered
//! as leaves are copied in; after [`Graph::backward`] their gradients can be
//! read back out by handle or by name.

mod conv;
mod gradcheck;
mod norm;
mod ops;

pub use gradcheck::{grad_check, GRAD_CHECK_STEP};
pub use norm::{BnMode, BN_EPSILON, BN_MOMENTUM, LN_EPSILON};
pub use ops::{SELU_ALPHA, SELU_LAMBDA};

use crate::error::{Error, Result};
use crate::tensor::{numel, Scalar, Tensor};

/// Handle to a node in a [`Graph`]. Only valid for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

struct Node<F> {
    data: Vec<F>,
    shape: Vec<usize>,
    needs_grad: bool,
}

type BackwardFn<F> = Box<dyn Fn(&mut BwCtx<'_, F>)>;

struct OpRec<F: Scalar> {
    out: usize,
    backward: BackwardFn<F>,
}

/// Gradient routing context handed to backward closures.
pub(crate) struct BwCtx<'a, F: Scalar> {
    upstream: &'a [F],
    nodes: &'a [Node<F>],
    grads: &'a mut [Option<Vec<F>>],
}

impl<'a, F: Scalar> BwCtx<'a, F> {
    fn upstream(&self) -> &[F] {
        self.upstream
    }

    fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].data
    }

    fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Gradient accumulator for `v`, zero-initialized on first access.
    fn slot(&mut self, v: Var) -> &mut [F] {
        let n = self.nodes[v.0].data.len();
        self.grads[v.0].get_or_insert_with(|| vec![F::zero(); n])
    }
}

/// Recorded computation of one forward pass.
pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
    ops: Vec<OpRec<F>>,
    named_leaves: Vec<(String, Var)>,
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), ops: Vec::new(), named_leaves: Vec::new(), grads: Vec::new() }
    }

    pub(crate) fn push_node(&mut self, shape: Vec<usize>, data: Vec<F>, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node { data, shape, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push_op(&mut self, out: Var, backward: BackwardFn<F>) {
        self.ops.push(OpRec { out: out.0, backward });
    }

    /// Register a tensor as a leaf; gradient tracking follows its
    /// `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor<F>) -> Var {
        self.push_node(t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    /// Register a named trainable leaf (gradient tracking forced on).
    pub fn param(&mut self, name: &str, t: &Tensor<F>) -> Var {
        let v = self.push_node(t.shape().to_vec(), t.data().to_vec(), true);
        self.named_leaves.push((name.to_string(), v));
        v
    }

    /// Register a constant leaf (never tracked).
    pub fn constant(&mut self, t: &Tensor<F>) -> Var {
        self.push_node(t.shape().to_vec(), t.data().to_vec(), false)
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].data
    }

    pub fn shape_of(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Copy a node's value out as a tensor.
    pub fn tensor(&self, v: Var) -> Tensor<F> {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].data.clone())
            .expect("node shape/data consistent")
    }

    pub(crate) fn check_same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::Dim(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.nodes[a.0].shape, self.nodes[b.0].shape
            )));
        }
        Ok(())
    }

    /// Propagate d(loss)/d(node) to every tracked leaf. `loss` must be scalar.
    ///
    /// Ops are replayed in reverse recording order, so every node's gradient
    /// is complete before its producing op consumes it, and each op runs at
    /// most once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![F::one()]);
        for op in self.ops.iter().rev() {
            let Some(upstream) = self.grads[op.out].take() else { continue };
            let mut ctx =
                BwCtx { upstream: &upstream, nodes: &self.nodes, grads: &mut self.grads };
            (op.backward)(&mut ctx);
        }
        Ok(())
    }

    /// Gradient of a leaf after [`Graph::backward`]. `None` when the leaf is
    /// untracked or unreachable from the loss.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of all named leaves, in registration order. Leaves that did
    /// not receive a gradient yield zeros.
    pub fn named_grads(&self) -> Vec<(String, Vec<F>)> {
        self.named_leaves
            .iter()
            .map(|(name, v)| {
                let g = self
                    .grad(*v)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![F::zero(); self.nodes[v.0].data.len()]);
                (name.clone(), g)
            })
            .collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }
}
