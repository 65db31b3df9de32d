//! Minimal reverse-mode tensor engine plus the generator, discriminator and
//! loss functions.
//!
//! Tensors form an immutable expression graph behind `Rc`; calling
//! [`Tensor::backward`] on a scalar walks the graph once in reverse
//! topological order and accumulates gradients into the leaf parameters.
//! Graphs are rebuilt every step, so transient gradients live only for the
//! duration of one backward pass while parameter gradients accumulate until
//! [`Tensor::zero_grad`].

mod layers;
mod losses;
mod models;
mod ops;

use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

pub use layers::{BatchNorm2d, Conv2d, Dense, Mode};
pub use losses::{
    loss_adv, loss_disc, loss_generator_total, loss_linf, loss_linf_batch, loss_linf_graph,
    LossBundle, BARRIER_CLAMP_DELTA, POWER_FLOOR,
};
pub use models::{
    DiscriminatorConfig, DiscriminatorNet, GeneratorConfig, GeneratorNet, ResidualUnit,
};
pub use ops::conv2d;

use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("backward requires a scalar, got {numel} elements")]
    BackwardNonScalar { numel: usize },
    #[error("unknown buffer or parameter: {0}")]
    UnknownName(String),
}

pub(crate) struct Node<S: Scalar> {
    shape: Vec<usize>,
    data: RefCell<Vec<S>>,
    grad: RefCell<Option<Vec<S>>>,
    requires_grad: bool,
    needs_grad: bool,
    parents: Vec<Tensor<S>>,
    backward_op: Option<Box<dyn ops::BackwardOp<S>>>,
}

/// N-dimensional array with optional gradient tracking. Cloning is cheap
/// (shared node).
pub struct Tensor<S: Scalar> {
    node: Rc<Node<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Self {
            node: Rc::clone(&self.node),
        }
    }
}

impl<S: Scalar> std::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<S>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape/data length mismatch"
        );
        Self::leaf(shape, data, false)
    }

    /// Trainable leaf: participates in gradient accumulation.
    pub fn parameter(shape: Vec<usize>, data: Vec<S>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self::leaf(shape, data, true)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::leaf(shape, vec![S::zero(); n], false)
    }

    pub fn scalar(v: S) -> Self {
        Self::leaf(vec![], vec![v], false)
    }

    fn leaf(shape: Vec<usize>, data: Vec<S>, requires_grad: bool) -> Self {
        Self {
            node: Rc::new(Node {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                needs_grad: requires_grad,
                parents: Vec::new(),
                backward_op: None,
            }),
        }
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<S>,
        parents: Vec<Tensor<S>>,
        op: Box<dyn ops::BackwardOp<S>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let needs_grad = parents.iter().any(|p| p.node.needs_grad);
        Self {
            node: Rc::new(Node {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: false,
                needs_grad,
                parents,
                backward_op: if needs_grad { Some(op) } else { None },
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        self.node.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<S>> {
        self.node.data.borrow()
    }

    /// Direct mutable access for optimizers and checkpoint loading. Must not
    /// be called while a graph built on this tensor is still in use.
    pub fn set_data(&self, new: &[S]) {
        let mut d = self.node.data.borrow_mut();
        assert_eq!(d.len(), new.len(), "set_data length mismatch");
        d.copy_from_slice(new);
    }

    pub fn update_data(&self, f: impl FnMut(&mut S)) {
        self.node.data.borrow_mut().iter_mut().for_each(f);
    }

    /// Overwrite one element; used by finite-difference probes.
    pub fn set_element(&self, idx: usize, v: S) {
        self.node.data.borrow_mut()[idx] = v;
    }

    /// Accumulated gradient of the last backward passes, if any.
    pub fn grad(&self) -> Option<Vec<S>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.numel(), 1, "item() on non-scalar");
        self.node.data.borrow()[0]
    }

    /// Same values, no graph history.
    pub fn detach(&self) -> Tensor<S> {
        Tensor::from_vec(self.node.shape.clone(), self.node.data.borrow().clone())
    }

    /// Reverse-mode sweep from a scalar. Leaf gradients accumulate
    /// additively across calls; transient node gradients are local to the
    /// call.
    pub fn backward(&self) -> Result<(), NnError> {
        if self.numel() != 1 {
            return Err(NnError::BackwardNonScalar {
                numel: self.numel(),
            });
        }
        let order = self.topo_order();
        let mut grads: HashMap<*const Node<S>, Vec<S>> = HashMap::new();
        grads.insert(Rc::as_ptr(&self.node), vec![S::one()]);
        for tensor in order.iter().rev() {
            let node = &*tensor.node;
            let Some(grad_out) = grads.remove(&(node as *const _)) else {
                continue;
            };
            if node.requires_grad {
                let mut slot = node.grad.borrow_mut();
                match slot.as_mut() {
                    Some(g) => {
                        for (a, b) in g.iter_mut().zip(&grad_out) {
                            *a += *b;
                        }
                    }
                    None => *slot = Some(grad_out.clone()),
                }
            }
            if let Some(op) = &node.backward_op {
                let out_data = node.data.borrow();
                let ctx = ops::OpCtx {
                    out_data: &out_data,
                    out_shape: &node.shape,
                    parents: &node.parents,
                };
                let parent_grads = op.backward(&ctx, &grad_out);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (parent, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !parent.node.needs_grad {
                        continue;
                    }
                    let entry = grads
                        .entry(Rc::as_ptr(&parent.node))
                        .or_insert_with(|| vec![S::zero(); parent.numel()]);
                    for (a, b) in entry.iter_mut().zip(&pg) {
                        *a += *b;
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the reachable graph (parents before children).
    fn topo_order(&self) -> Vec<Tensor<S>> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Node<S>> = HashSet::new();
        // iterative DFS; the second stack entry flags the post-visit
        let mut stack: Vec<(Tensor<S>, bool)> = vec![(self.clone(), false)];
        while let Some((t, post)) = stack.pop() {
            let ptr = Rc::as_ptr(&t.node);
            if post {
                order.push(t);
                continue;
            }
            if !visited.insert(ptr) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.node.parents {
                if p.node.needs_grad && !visited.contains(&Rc::as_ptr(&p.node)) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}
