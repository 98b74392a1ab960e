use std::fmt;
use std::sync::{Arc, Mutex};

use crate::autograd::is_grad_enabled;
use crate::error::{contract_err, dim_err, Result, TensorError};
use crate::scalar::Scalar;

/// Backward closure: `(grad_of_output, output_data) -> grad per input`.
///
/// Entries for inputs that do not require gradients may be `None`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[T]) -> Vec<Option<Vec<T>>> + Send + Sync>;

pub(crate) struct GradFn<T: Scalar> {
    pub(crate) op: &'static str,
    pub(crate) inputs: Vec<Tensor<T>>,
    pub(crate) backward: BackwardFn<T>,
}

pub(crate) struct Node<T: Scalar> {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<T>,
    pub(crate) requires_grad: bool,
    /// Accumulated gradient; only populated on leaves.
    pub(crate) grad: Mutex<Option<Vec<T>>>,
    pub(crate) grad_fn: Option<GradFn<T>>,
}

/// An immutable N-D array, optionally participating in the gradient tape.
///
/// Cloning is cheap (reference counted) and clones share the gradient slot.
pub struct Tensor<T: Scalar = f32> {
    pub(crate) node: Arc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Self {
            node: Arc::clone(&self.node),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<T> = self.data().iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn leaf(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        Self {
            node: Arc::new(Node {
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                grad_fn: None,
            }),
        }
    }

    /// Builds a constant tensor. Fails if `data` does not fill `shape` or is not finite.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return dim_err(
                "from_vec",
                format!(
                    "shape {shape:?} needs {} values, got {}",
                    numel(shape),
                    data.len()
                ),
            );
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "from_vec" });
        }
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    /// A leaf that accumulates gradients.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        Ok(t.with_requires_grad())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(shape.to_vec(), vec![T::zero(); numel(shape)], false)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::leaf(shape.to_vec(), vec![value; numel(shape)], false)
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf(Vec::new(), vec![value], false)
    }

    /// A fresh leaf holding the same values; gradients requested on it are
    /// independent of `self`.
    pub fn with_requires_grad(&self) -> Self {
        Self::leaf(self.node.shape.clone(), self.node.data.clone(), true)
    }

    /// Cuts the tape: the result is a constant leaf with the same values.
    pub fn detach(&self) -> Self {
        if !self.requires_grad() {
            return self.clone();
        }
        Self::leaf(self.node.shape.clone(), self.node.data.clone(), false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn ndim(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.node.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return contract_err("item", format!("tensor has {} elements", self.numel()));
        }
        Ok(self.node.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// True for tensors created directly rather than by an operation.
    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    /// Name of the operation that produced this tensor, if any.
    pub fn op_name(&self) -> Option<&'static str> {
        self.node.grad_fn.as_ref().map(|g| g.op)
    }

    /// Accumulated gradient of a leaf after [`Tensor::backward`].
    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock poisoned") = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.node.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// True when both handles refer to the same node.
    pub fn same_node(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.node, &other.node)
    }

    /// Converts the element type; the result is a constant leaf.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let data = self.data().iter().map(|v| U::of(v.as_f64())).collect();
        Tensor::leaf(self.node.shape.clone(), data, false)
    }

    /// Result of an operation. Records `backward` when any input is tracked
    /// and the tape is enabled. Non-finite outputs are rejected.
    pub(crate) fn from_op<F>(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        inputs: Vec<Tensor<T>>,
        backward: F,
    ) -> Result<Self>
    where
        F: Fn(&[T], &[T]) -> Vec<Option<Vec<T>>> + Send + Sync + 'static,
    {
        debug_assert_eq!(numel(&shape), data.len(), "{op} produced wrong length");
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        let track = is_grad_enabled() && inputs.iter().any(Tensor::requires_grad);
        if !track {
            return Ok(Self::leaf(shape, data, false));
        }
        Ok(Self {
            node: Arc::new(Node {
                shape,
                data,
                requires_grad: true,
                grad: Mutex::new(None),
                grad_fn: Some(GradFn {
                    op,
                    inputs,
                    backward: Box::new(backward),
                }),
            }),
        })
    }
}

impl<T: Scalar> Drop for Node<T> {
    // Long tapes would otherwise recurse once per node when dropped.
    fn drop(&mut self) {
        let mut stack: Vec<Arc<Node<T>>> = Vec::new();
        if let Some(gf) = self.grad_fn.take() {
            stack.extend(gf.inputs.into_iter().map(|t| t.node));
        }
        while let Some(node) = stack.pop() {
            if let Ok(mut inner) = Arc::try_unwrap(node) {
                if let Some(gf) = inner.grad_fn.take() {
                    stack.extend(gf.inputs.into_iter().map(|t| t.node));
                }
            }
        }
    }
}
