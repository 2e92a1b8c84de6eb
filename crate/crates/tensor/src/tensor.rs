use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::{Result, Scalar, TensorError};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Backward rule of a recorded op.
///
/// `backward` receives the gradient of the op output and returns one entry
/// per input (in `inputs()` order). Entries for inputs with `needs[i] ==
/// false` may be `None`.
pub trait GradFn<T: Scalar> {
    fn name(&self) -> &'static str;
    fn inputs(&self) -> Vec<Tensor<T>>;
    fn backward(&self, grad_out: &[T], needs: &[bool]) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    grad_fn: Option<Box<dyn GradFn<T>>>,
}

/// Dense tensor handle. Cloning is cheap and shares storage.
pub struct Tensor<T: Scalar = f32> {
    node: Rc<Node<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.node.id)
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .field("op", &self.node.grad_fn.as_ref().map(|g| g.name()))
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    fn build(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        grad_fn: Option<Box<dyn GradFn<T>>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            node: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                grad_fn,
            }),
        }
    }

    /// Constant tensor (no gradient tracking).
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::shape(
                "tensor",
                format!("shape {shape:?} holds {numel} values, got {}", data.len()),
            ));
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Leaf tensor that accumulates gradients.
    pub fn leaf(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(Self::build(t.shape().to_vec(), t.to_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), vec![T::zero(); n], false, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), vec![value; n], false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::build(vec![], vec![value], false, None)
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::cast(v)).collect())
    }

    /// Output of a differentiable op. Gradient tracking is enabled iff any
    /// input requires it; otherwise the backward rule is dropped.
    pub fn from_op(shape: Vec<usize>, data: Vec<T>, grad_fn: Box<dyn GradFn<T>>) -> Self {
        let requires_grad = grad_fn.inputs().iter().any(|t| t.requires_grad());
        let grad_fn = if requires_grad { Some(grad_fn) } else { None };
        Self::build(shape, data, requires_grad, grad_fn)
    }

    pub fn id(&self) -> u64 {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn dim(&self, i: usize) -> usize {
        self.node.shape[i]
    }

    pub fn ndim(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.node.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.node.grad_fn.as_ref().map(|g| g.name())
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.node.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.borrow().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        let d = self.node.data.borrow();
        assert_eq!(d.len(), 1, "item() on a tensor with {} values", d.len());
        d[0]
    }

    /// Overwrite the values in place. Used by optimizers and the gradient
    /// checker; graphs built before the write keep referencing the new values.
    pub fn set_data(&self, data: &[T]) {
        let mut d = self.node.data.borrow_mut();
        assert_eq!(d.len(), data.len(), "set_data length mismatch");
        d.copy_from_slice(data);
    }

    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.node.data.borrow_mut());
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<T>>> {
        self.node.grad.borrow()
    }

    /// Reset the gradient buffer to zeros (present, not absent).
    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = Some(vec![T::zero(); self.numel()]);
    }

    pub fn clear_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// True when both handles refer to the same storage.
    pub fn same_storage(&self, other: &Tensor<T>) -> bool {
        Rc::ptr_eq(&self.node, &other.node)
    }

    /// Copy of the values with no graph attached.
    pub fn detach(&self) -> Tensor<T> {
        Self::build(self.shape().to_vec(), self.to_vec(), false, None)
    }

    fn accumulate_grad(&self, g: Vec<T>) {
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, &v) in acc.iter_mut().zip(&g) {
                    *a += v;
                }
            }
            None => *slot = Some(g),
        }
    }

    /// Backpropagate from a one-element tensor with seed gradient 1.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar(self.shape().to_vec()));
        }
        self.backward_with(&[T::one()])
    }

    /// Backpropagate with an explicit output gradient.
    ///
    /// Nodes are visited in strictly decreasing creation order, so every
    /// node's gradient is complete before it is propagated and the
    /// accumulation order is a deterministic function of the forward pass.
    pub fn backward_with(&self, seed: &[T]) -> Result<()> {
        if seed.len() != self.numel() {
            return Err(TensorError::shape(
                "backward",
                format!("seed has {} values for shape {:?}", seed.len(), self.shape()),
            ));
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
            if let Some(f) = &t.node.grad_fn {
                stack.extend(f.inputs().into_iter().filter(|i| i.requires_grad()));
            }
            order.push(t);
        }
        order.sort_by_key(|t| std::cmp::Reverse(t.id()));

        self.accumulate_grad(seed.to_vec());
        for t in &order {
            let Some(f) = &t.node.grad_fn else { continue };
            let grad = t.node.grad.borrow();
            let Some(grad) = grad.as_ref() else { continue };
            let inputs = f.inputs();
            let needs: Vec<bool> = inputs.iter().map(|i| i.requires_grad()).collect();
            let grads = f.backward(grad, &needs);
            debug_assert_eq!(grads.len(), inputs.len());
            for ((input, g), need) in inputs.iter().zip(grads).zip(needs) {
                if let (true, Some(g)) = (need, g) {
                    debug_assert_eq!(g.len(), input.numel(), "{} grad length", f.name());
                    input.accumulate_grad(g);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_buffer() {
        assert!(Tensor::<f32>::new(&[2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn clones_share_storage() {
        let a = Tensor::<f32>::zeros(&[3]);
        let b = a.clone();
        assert!(a.same_storage(&b));
        assert!(!a.same_storage(&a.detach()));
    }

    #[test]
    fn backward_requires_scalar() {
        let a = Tensor::<f32>::leaf(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(a.backward(), Err(TensorError::NotScalar(_))));
    }
}
