//! Dense tensors with reverse-mode differentiation.
//!
//! Every operation eagerly computes its output and, when any input requires a
//! gradient, records a closure mapping the output gradient to input gradients.
//! Node ids grow monotonically, so visiting reachable nodes by decreasing id is
//! a valid reverse topological order.
//!
//! Layout is contiguous row-major with the batch axis outermost.

pub mod checkpoint;
pub mod gradcheck;
pub mod ops;

use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::Scalar;

pub use checkpoint::{read_checkpoint, write_checkpoint, NamedArray};

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this graph")]
    GraphConsumed,
    #[error("soft threshold must be non-negative")]
    NegativeThreshold,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

type BackwardFn<S> = Box<dyn Fn(&[S]) -> Vec<Option<Vec<S>>>>;

struct Op<S: Scalar> {
    parents: Vec<Tensor<S>>,
    backward: BackwardFn<S>,
}

struct Node<S: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<S>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<S>>>,
    op: Option<Op<S>>,
    consumed: Cell<bool>,
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Reference-counted handle to a graph node. Cloning is cheap.
pub struct Tensor<S: Scalar>(Rc<Node<S>>);

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tensor<S> {
    fn make(shape: Vec<usize>, data: Vec<S>, requires_grad: bool, op: Option<Op<S>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            op,
            consumed: Cell::new(false),
        }))
    }

    fn checked(shape: Vec<usize>, data: Vec<S>, requires_grad: bool) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "{} values for shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self::make(shape, data, requires_grad, None))
    }

    /// A constant: no gradient is tracked.
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        Self::checked(shape, data, false)
    }

    /// A leaf whose gradient is accumulated by [`Tensor::backward`].
    pub fn variable(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        Self::checked(shape, data, true)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self::make(shape, vec![S::zero(); n], false, None)
    }

    pub fn scalar(v: S) -> Self {
        Self::make(vec![], vec![v], false, None)
    }

    /// Builds the output of a custom differentiable operation.
    ///
    /// `backward` receives the gradient of the output and returns one entry per
    /// parent, `None` where no gradient flows.
    pub fn from_op<F>(shape: Vec<usize>, data: Vec<S>, parents: Vec<Tensor<S>>, backward: F) -> Self
    where
        F: Fn(&[S]) -> Vec<Option<Vec<S>>> + 'static,
    {
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let op = requires_grad.then(|| Op { parents, backward: Box::new(backward) });
        Self::make(shape, data, requires_grad, op)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[S] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Accumulated gradient of a leaf variable.
    pub fn grad(&self) -> Option<Vec<S>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::make(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    fn id(&self) -> u64 {
        self.0.id
    }

    /// Back-propagates from this scalar into every reachable leaf variable.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if self.0.consumed.replace(true) {
            return Err(TensorError::GraphConsumed);
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            if let Some(op) = &t.0.op {
                stack.extend(op.parents.iter().filter(|p| p.requires_grad()).cloned());
            }
            order.push(t);
        }
        order.sort_unstable_by_key(|t| std::cmp::Reverse(t.id()));

        let mut grads: HashMap<u64, Vec<S>> = HashMap::new();
        grads.insert(self.id(), vec![S::one()]);
        for t in order {
            let Some(g) = grads.remove(&t.id()) else { continue };
            match &t.0.op {
                None => {
                    let mut slot = t.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        None => *slot = Some(g),
                    }
                }
                Some(op) => {
                    let parent_grads = (op.backward)(&g);
                    debug_assert_eq!(parent_grads.len(), op.parents.len());
                    for (p, pg) in op.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel());
                        match grads.get_mut(&p.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                            None => {
                                grads.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
