//! Dense f64 tensors with reverse-mode gradients.
//!
//! Every operation allocates a fresh output tensor and, when gradients are
//! enabled and at least one input requires them, records the operation so a
//! later [`Tensor::backward`] call can push gradients to the inputs. Inputs
//! are never mutated; the only sanctioned in-place write is the optimizer
//! step on parameters (see [`crate::store::ParamStore`]).
//!
//! A tensor graph is confined to one thread (handles are `Rc`-based, which
//! the compiler enforces).

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{dim_err, DiffError, Result};
use crate::ops::Op;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording disabled on this thread. Useful for
/// evaluation passes where no backward call will follow.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let out = f();
    GRAD_ENABLED.with(|g| g.set(prev));
    out
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) struct Inner {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) grad: Option<Vec<f64>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Option<Op>,
}

/// Shared handle to a tensor node. Cloning is cheap and aliases the value.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<RefCell<Inner>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Option<Op>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                data,
                grad: None,
                requires_grad,
                op,
            })),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(dim_err(
                "from_vec",
                format!("shape {:?} does not match data length {}", shape, data.len()),
            ));
        }
        Ok(Tensor::build(shape.to_vec(), data, false, None))
    }

    /// Constant scalar wrapped as a `[1]` tensor.
    pub fn scalar(v: f64) -> Tensor {
        Tensor::build(vec![1], vec![v], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::build(shape.to_vec(), vec![0.0; n], false, None)
    }

    /// Leaf tensor that participates in gradient accumulation.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(dim_err(
                "param",
                format!("shape {:?} does not match data length {}", shape, data.len()),
            ));
        }
        Ok(Tensor::build(shape.to_vec(), data, true, None))
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<Tensor> {
        if cfg!(debug_assertions) && !data.iter().all(|v| v.is_finite()) {
            return Err(DiffError::NonFinite { op: op.name() });
        }
        let record = grad_enabled() && op.parents().iter().any(|p| p.requires_grad());
        Ok(Tensor::build(
            shape,
            data,
            record,
            if record { Some(op) } else { None },
        ))
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Copy of the tensor contents, row-major.
    pub fn value(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let inner = self.inner.borrow();
        assert_eq!(inner.data.len(), 1, "item() on non-scalar tensor");
        inner.data[0]
    }

    /// Copy of the accumulated gradient, if one has been computed.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.inner.borrow().data.iter().all(|v| v.is_finite())
    }

    /// Adds `delta` to one entry in place. Support for finite-difference
    /// gradient checks; not part of the normal dataflow.
    pub fn fd_perturb(&self, index: usize, delta: f64) {
        self.inner.borrow_mut().data[index] += delta;
    }

    /// Replaces the tensor contents. Shape must match. Used when loading
    /// checkpoints into registered parameters.
    pub fn set_value(&self, data: &[f64]) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        if inner.data.len() != data.len() {
            return Err(dim_err(
                "set_value",
                format!("expected {} values, got {}", inner.data.len(), data.len()),
            ));
        }
        inner.data.copy_from_slice(data);
        Ok(())
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        let n = inner.data.len();
        debug_assert_eq!(n, contribution.len());
        let grad = inner.grad.get_or_insert_with(|| vec![0.0; n]);
        for (g, c) in grad.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    /// Reverse pass from a scalar loss. Populates `grad` on every tensor in
    /// the recorded graph that requires gradients, then clears the graph so
    /// buffers can be reclaimed and the next forward starts fresh.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(DiffError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(DiffError::Contract(
                "loss does not depend on any tensor that requires gradients".into(),
            ));
        }

        // Iterative post-order DFS; recursion would overflow on deep graphs.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<*const RefCell<Inner>> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            let key = Rc::as_ptr(&node.inner);
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(key) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(op) = node.inner.borrow().op.as_ref() {
                for parent in op.parents() {
                    if parent.requires_grad() && !visited.contains(&Rc::as_ptr(&parent.inner)) {
                        stack.push((parent, false));
                    }
                }
            }
        }

        self.accumulate_grad(&[1.0]);
        for node in order.iter().rev() {
            let op = node.inner.borrow_mut().op.take();
            if let Some(op) = op {
                let (grad, data) = {
                    let inner = node.inner.borrow();
                    match inner.grad.as_ref() {
                        Some(g) => (g.clone(), inner.data.clone()),
                        None => continue,
                    }
                };
                op.backward(&grad, &data);
            }
        }
        Ok(())
    }
}
