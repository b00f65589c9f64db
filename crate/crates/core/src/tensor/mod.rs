//! Dense row-major `f64` tensors with reverse-mode differentiation.
//!
//! A [`Tensor`] is an immutable value. Operations allocate fresh outputs and,
//! when any input requires a gradient, record a backward closure on the output.
//! [`Tensor::backward`] walks that record from a scalar loss and returns a
//! [`Gradients`] table keyed by leaf identity.
//!
//! Layout is C-order everywhere: the last axis is contiguous.

mod conv;
mod ops;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

pub use conv::{conv2d_raw_output_dims, upsample_weights};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(u64);

/// Per-input gradients returned by a backward closure. `None` for inputs that
/// do not require a gradient.
pub(crate) type InputGrads = Vec<Option<Vec<f64>>>;

pub(crate) struct BackwardCtx<'a> {
    pub grad: &'a [f64],
    pub out: &'a [f64],
    pub inputs: &'a [Tensor],
}

impl BackwardCtx<'_> {
    pub fn needs(&self, i: usize) -> bool {
        self.inputs[i].requires_grad()
    }
}

type BackwardFn = dyn Fn(&BackwardCtx<'_>) -> InputGrads + Send + Sync;

struct GradFn {
    name: &'static str,
    inputs: Vec<Tensor>,
    backward: Box<BackwardFn>,
}

struct Inner {
    id: TensorId,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

#[derive(Clone)]
pub struct Tensor {
    inner: Arc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.inner.shape);
        if let Some(g) = &self.inner.grad_fn {
            s.field("op", &g.name);
        }
        if self.inner.data.len() <= 16 {
            s.field("data", &self.inner.data);
        }
        s.finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: TensorId(NEXT_ID.fetch_add(1, Ordering::Relaxed)),
                shape,
                data,
                requires_grad,
                grad_fn,
            }),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} holds {} elements, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Ok(Self::new(shape, data)?.into_leaf(true))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::build(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![], vec![value], false, None)
    }

    /// Detached copy of the values as a fresh leaf with the given tracking flag.
    pub fn into_leaf(self, requires_grad: bool) -> Self {
        let data = match Arc::try_unwrap(self.inner) {
            Ok(inner) => return Self::build(inner.shape, inner.data, requires_grad, None),
            Err(shared) => (shared.shape.clone(), shared.data.clone()),
        };
        Self::build(data.0, data.1, requires_grad, None)
    }

    pub fn detach(&self) -> Self {
        Self::build(self.inner.shape.clone(), self.inner.data.clone(), false, None)
    }

    /// Output of a differentiable operation. The closure is dropped when no
    /// input requires a gradient.
    pub(crate) fn from_op<F>(
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: Vec<Tensor>,
        backward: F,
    ) -> Self
    where
        F: Fn(&BackwardCtx<'_>) -> InputGrads + Send + Sync + 'static,
    {
        if inputs.iter().any(Tensor::requires_grad) {
            let grad_fn = GradFn {
                name,
                inputs,
                backward: Box::new(backward),
            };
            Self::build(shape, data, true, Some(grad_fn))
        } else {
            Self::build(shape, data, false, None)
        }
    }

    pub fn id(&self) -> TensorId {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.grad_fn.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.inner.data[0]
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.inner.shape[axis]
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn expect_ndim(&self, n: usize, what: &str) -> Result<()> {
        if self.ndim() != n {
            return Err(Error::shape(format!(
                "{what}: expected {n}-d tensor, got shape {:?}",
                self.shape()
            )));
        }
        Ok(())
    }

    /// Reverse-mode gradients of this scalar with respect to every leaf that
    /// requires a gradient and is reachable from it.
    pub fn backward(&self) -> Result<Gradients> {
        if self.numel() != 1 {
            return Err(Error::arg(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        let mut leaves = HashMap::new();
        if !self.requires_grad() {
            return Ok(Gradients { leaves });
        }
        let order = self.topo_order();
        let mut pending: HashMap<TensorId, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);

        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            match &node.inner.grad_fn {
                None => {
                    leaves.insert(node.id(), grad);
                }
                Some(f) => {
                    let ctx = BackwardCtx {
                        grad: &grad,
                        out: &node.inner.data,
                        inputs: &f.inputs,
                    };
                    let input_grads = (f.backward)(&ctx);
                    debug_assert_eq!(input_grads.len(), f.inputs.len(), "op {}", f.name);
                    for (input, g) in f.inputs.iter().zip(input_grads) {
                        let Some(g) = g else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(g.len(), input.numel(), "op {}", f.name);
                        match pending.get_mut(&input.id()) {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(input.id(), g);
                            }
                        }
                    }
                }
            }
        }
        Ok(Gradients { leaves })
    }

    /// Post-order over the tracked subgraph: every node after its inputs.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(f) = &node.inner.grad_fn {
                for input in f.inputs.iter().rev() {
                    if input.requires_grad() && !seen.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}

/// Gradients of a scalar with respect to the leaves reachable from it.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    leaves: HashMap<TensorId, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, leaf: &Tensor) -> Option<&[f64]> {
        self.leaves.get(&leaf.id()).map(Vec::as_slice)
    }

    /// Gradient buffer for `leaf`, all zeros when the leaf is not on a path to
    /// the loss.
    pub fn wrt(&self, leaf: &Tensor) -> Tensor {
        let data = self
            .get(leaf)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; leaf.numel()]);
        Tensor::build(leaf.shape().to_vec(), data, false, None)
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}
