//! Dense row-major tensors with tape-free reverse-mode differentiation.
//!
//! Every operation that touches a tensor with `requires_grad` records its
//! parents and the values its backward rule needs; [`Tensor::backward`] then
//! walks that graph once in reverse topological order. Operations on tensors
//! that do not require gradients record nothing.
//!
//! Leaf tensors and the root of a backward pass retain their gradient;
//! intermediate gradients are dropped as soon as they have been propagated.

mod grad;
mod nn;
mod ops;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::real::Real;

pub use nn::{bilinear_taps, BilinearTap};

use grad::Op;

/// A dense tensor participating in a differentiation graph.
///
/// Cloning is cheap (reference counted); the values themselves are
/// immutable once created.
pub struct Tensor<T: Real>(Arc<Node<T>>);

struct Node<T: Real> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
    grad: Mutex<Option<Vec<T>>>,
}

struct GradFn<T: Real> {
    op: Op<T>,
    parents: Vec<Tensor<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<T> = self.0.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    /// Builds a constant tensor. Fails if the data length does not match the shape.
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Self::leaf(data, shape.to_vec(), false))
    }

    /// Builds a leaf that accumulates gradients.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        Ok(Self::new(data, shape)?.requires_grad())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(vec![T::zero(); numel(shape)], shape.to_vec(), false)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::leaf(vec![value; numel(shape)], shape.to_vec(), false)
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf(vec![value], Vec::new(), false)
    }

    /// Converts values from an `f64` slice.
    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::new(data.iter().map(|&v| T::lit(v)).collect(), shape)
    }

    fn leaf(data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> Self {
        Tensor(Arc::new(Node {
            shape,
            data,
            requires_grad,
            grad_fn: None,
            grad: Mutex::new(None),
        }))
    }

    /// Wraps an op result; the graph edge is kept only if some parent needs gradients.
    fn from_op(data: Vec<T>, shape: Vec<usize>, op: Op<T>, parents: &[&Tensor<T>]) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = parents.iter().any(|p| p.0.requires_grad);
        let grad_fn = requires_grad.then(|| GradFn {
            op,
            parents: parents.iter().map(|&p| p.clone()).collect(),
        });
        Tensor(Arc::new(Node {
            shape,
            data,
            requires_grad,
            grad_fn,
            grad: Mutex::new(None),
        }))
    }

    /// Returns a new leaf with the same values that accumulates gradients.
    pub fn requires_grad(self) -> Self {
        if self.0.requires_grad && self.0.grad_fn.is_none() {
            return self;
        }
        Self::leaf(self.0.data.clone(), self.0.shape.clone(), true)
    }

    /// Returns a constant leaf with the same values, cut from any graph.
    pub fn detach(&self) -> Self {
        Self::leaf(self.0.data.clone(), self.0.shape.clone(), false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn tracks_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock") = None;
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Same values in another precision, as a constant leaf.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::leaf(
            self.0.data.iter().map(|v| U::lit(v.as_f64())).collect(),
            self.0.shape.clone(),
            false,
        )
    }

    fn key(&self) -> *const Node<T> {
        Arc::as_ptr(&self.0)
    }

    /// Graph nodes reachable from `self` through gradient-tracking edges,
    /// parents before children.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Node<T>> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(node.key()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(gf) = &node.0.grad_fn {
                for p in &gf.parents {
                    if p.0.requires_grad && !seen.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }

    /// Back-propagates from this single-element tensor.
    ///
    /// Gradients accumulate into leaves that require them (call
    /// [`zero_grad`](Self::zero_grad) or rebuild the leaves between passes).
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must hold one value, has shape {:?}", self.shape()),
            ));
        }
        if !self.0.requires_grad {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<*const Node<T>, Vec<T>> = HashMap::new();
        pending.insert(self.key(), vec![T::one()]);
        let root = self.key();

        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.key()) else {
                continue;
            };
            if let Some(gf) = &node.0.grad_fn {
                let parent_grads = gf.op.backward(&g, &gf.parents, &node.0.data);
                for (parent, pg) in gf.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !parent.0.requires_grad {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), parent.numel());
                    match pending.get_mut(&parent.key()) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a = *a + b),
                        None => {
                            pending.insert(parent.key(), pg);
                        }
                    }
                }
            }
            if node.is_leaf() || node.key() == root {
                let mut slot = node.0.grad.lock().expect("grad lock");
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}
