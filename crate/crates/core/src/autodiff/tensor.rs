use std::cell::{Ref, RefCell};
use std::rc::{Rc, Weak};

use crate::autodiff::tape::TapeInner;
use crate::error::{Error, Result};

/// A reference-counted f64 tensor, rank 1 or 2, row-major.
///
/// Cloning is shallow: clones share values, gradient and tape binding. Values
/// are interior-mutable so the optimizer can update parameters in place while
/// model code keeps stable handles across epochs.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<TensorInner>,
}

pub(crate) struct TensorInner {
    shape: Vec<usize>,
    pub(crate) values: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    /// Node id on the tape currently tracking this tensor, if any.
    pub(crate) binding: RefCell<Option<(Weak<TapeInner>, usize)>>,
    name: RefCell<Option<String>>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        let numel: usize = shape.iter().product();
        assert!(
            (1..=2).contains(&shape.len()) && numel == values.len(),
            "tensor shape {:?} does not describe {} values",
            shape,
            values.len()
        );
        Tensor {
            inner: Rc::new(TensorInner {
                shape,
                values: RefCell::new(values),
                grad: RefCell::new(None),
                binding: RefCell::new(None),
                name: RefCell::new(None),
            }),
        }
    }

    pub fn scalar(x: f64) -> Tensor {
        Tensor::from_vec(vec![1], vec![x])
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, vec![0.0; n])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Tensor {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        let mut values = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows in from_rows");
            values.extend_from_slice(row);
        }
        Tensor::from_vec(vec![r, c], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    /// Rows and columns, treating a rank-1 tensor of length n as n x 1.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.inner.shape.as_slice() {
            [n] => Ok((*n, 1)),
            [r, c] => Ok((*r, *c)),
            other => Err(Error::ShapeMismatch {
                op,
                left: other.to_vec(),
                right: vec![],
            }),
        }
    }

    pub fn values(&self) -> Ref<'_, Vec<f64>> {
        self.inner.values.borrow()
    }

    pub fn value_vec(&self) -> Vec<f64> {
        self.inner.values.borrow().clone()
    }

    /// Overwrite values in place. The shape (and so the length) is fixed.
    pub fn set_values(&self, values: &[f64]) {
        let mut v = self.inner.values.borrow_mut();
        assert_eq!(v.len(), values.len(), "set_values length mismatch");
        v.copy_from_slice(values);
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.inner.values.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    /// Drop any accumulated gradient. Backward accumulates, so training loops
    /// reset explicitly between steps.
    pub fn clear_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.inner.grad.borrow_mut();
        let buf = slot.get_or_insert_with(|| vec![0.0; self.numel()]);
        for (b, x) in buf.iter_mut().zip(g) {
            *b += x;
        }
    }

    /// Make sure a gradient buffer exists (zeros if nothing flowed here).
    pub(crate) fn ensure_grad(&self) {
        let mut slot = self.inner.grad.borrow_mut();
        if slot.is_none() {
            *slot = Some(vec![0.0; self.numel()]);
        }
    }

    pub fn set_name(&self, name: impl Into<String>) {
        *self.inner.name.borrow_mut() = Some(name.into());
    }

    pub fn name(&self) -> String {
        self.inner
            .name
            .borrow()
            .clone()
            .unwrap_or_else(|| "<unnamed>".to_string())
    }

    /// The node id of this tensor on `tape`, if it is bound there.
    pub(crate) fn node_on(&self, tape: &Rc<TapeInner>) -> Option<usize> {
        let binding = self.inner.binding.borrow();
        let (weak, id) = binding.as_ref()?;
        let live = weak.upgrade()?;
        Rc::ptr_eq(&live, tape).then_some(*id)
    }

    /// The live tape (and node id) currently tracking this tensor.
    pub(crate) fn live_binding(&self) -> Option<(Rc<TapeInner>, usize)> {
        let binding = self.inner.binding.borrow();
        let (weak, id) = binding.as_ref()?;
        weak.upgrade().map(|tape| (tape, *id))
    }

    pub(crate) fn bind(&self, tape: &Rc<TapeInner>, node: usize) {
        *self.inner.binding.borrow_mut() = Some((Rc::downgrade(tape), node));
    }

    /// Deep copy: fresh storage, no tape binding, no gradient.
    pub fn detached_clone(&self) -> Tensor {
        let t = Tensor::from_vec(self.inner.shape.clone(), self.value_vec());
        if let Some(name) = self.inner.name.borrow().as_ref() {
            t.set_name(name.clone());
        }
        t
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("name", &self.inner.name.borrow())
            .field("shape", &self.inner.shape)
            .field("values", &self.inner.values.borrow())
            .finish()
    }
}
