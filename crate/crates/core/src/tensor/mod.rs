//! Dense tensors with reverse-mode differentiation over a per-step tape.
//!
//! [`Tensor`] is an immutable, row-major, reference-counted value; cloning is
//! cheap and sharing across threads is safe. Differentiation is opt-in: bind
//! a tensor to a [`Tape`] as a leaf (or through a [`Parameter`]), run ops from
//! [`crate::ops`], then call [`Tape::backward`] on a scalar loss.

mod check;
mod tape;

pub use check::grad_check;
pub use tape::{GradSink, Gradients, Tape};

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Scalar element type of a tensor: `f32` for training/inference,
/// `f64` for gradient checking.
pub trait Element:
    num_traits::Float + num_traits::NumAssign + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    const DTYPE: &'static str;
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Gauss error function, used by the exact GELU.
    fn erf(self) -> Self;
}

impl Element for f32 {
    const DTYPE: &'static str = "f32";
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn erf(self) -> Self {
        libm::erf(self as f64) as f32
    }
}

impl Element for f64 {
    const DTYPE: &'static str = "f64";
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

/// Location of a tensor's node on a specific tape.
#[derive(Clone, Copy, Debug)]
pub(crate) struct NodeRef {
    pub(crate) tape: u64,
    pub(crate) index: usize,
}

/// Dense n-dimensional array in row-major order.
#[derive(Clone)]
pub struct Tensor<T: Element> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    pub(crate) node: Option<NodeRef>,
}

impl<T: Element> Tensor<T> {
    /// Build a tensor from explicit contents. Fails when the data length does
    /// not match the shape product or when any extent is zero.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::shape(format!("zero extent in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            requires_grad: false,
            node: None,
        })
    }

    /// Internal constructor for op outputs; shape is trusted.
    pub(crate) fn raw(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data: Arc::new(data),
            requires_grad: false,
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor::raw(shape.to_vec(), vec![T::zero(); numel])
    }

    pub fn ones(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor::raw(shape.to_vec(), vec![T::one(); numel])
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let numel = shape.iter().product();
        Tensor::raw(shape.to_vec(), vec![v; numel])
    }

    pub fn scalar(v: T) -> Self {
        Tensor::raw(vec![1], vec![v])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::raw(shape.to_vec(), (0..numel).map(|i| f(i)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.data)
    }

    /// Mutable access to the elements, copying only when the buffer is shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        self.node = None;
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Value of the single element of a scalar tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Row-major element lookup by multi-index.
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &ext)) in index.iter().zip(self.shape.iter()).enumerate() {
            assert!(ix < ext, "index {ix} out of range at axis {i}");
            flat = flat * ext + ix;
        }
        self.data[flat]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Marks the tensor as a differentiation target for [`Tape::leaf`].
    pub fn requiring_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    /// Copy without any tape binding.
    pub fn detached(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            requires_grad: self.requires_grad,
            node: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Convert between element precisions.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor::raw(
            self.shape.clone(),
            self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        )
    }

    /// Same data viewed under a new shape with an equal element count.
    pub(crate) fn with_shape(&self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() || shape.iter().any(|&e| e == 0) {
            return Err(Error::shape(format!(
                "cannot view {:?} as {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
            requires_grad: self.requires_grad,
            node: self.node,
        })
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.numel() <= 16 {
            write!(f, " {:?}", &self.data[..])
        } else {
            write!(f, " [{:?}, {:?}, ...]", self.data[0], self.data[1])
        }
    }
}

/// Named trainable tensor with an accumulated gradient slot.
pub struct Parameter<T: Element> {
    name: String,
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
}

impl<T: Element> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Parameter {
            name: name.into(),
            value: value.detached().requiring_grad(),
            grad: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    /// Accumulated gradient; zero until [`set_grad`](Self::set_grad) is called.
    pub fn grad(&self) -> Tensor<T> {
        match &self.grad {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.value.shape()),
        }
    }

    pub fn set_grad(&mut self, g: Tensor<T>) -> Result<()> {
        if g.shape() != self.value.shape() {
            return Err(Error::shape(format!(
                "gradient shape {:?} != value shape {:?} for parameter {}",
                g.shape(),
                self.value.shape(),
                self.name
            )));
        }
        self.grad = Some(g.detached());
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn set_value(&mut self, v: Tensor<T>) -> Result<()> {
        if v.shape() != self.value.shape() {
            return Err(Error::shape(format!(
                "value shape {:?} != existing shape {:?} for parameter {}",
                v.shape(),
                self.value.shape(),
                self.name
            )));
        }
        self.value = v.detached().requiring_grad();
        Ok(())
    }

    /// In-place mutation of the value (used by optimizers and perturbation
    /// tests); copies only if the buffer is shared.
    pub fn value_mut(&mut self) -> &mut [T] {
        self.value.data_mut()
    }
}

impl<T: Element> fmt::Debug for Parameter<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Parameter({} {:?})", self.name, self.value.shape())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_layout() {
        let t = Tensor::<f64>::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.at(&[1, 0]), 3.0);
        assert_eq!(t.at(&[0, 1]), 2.0);
    }

    #[test]
    fn zero_tensor() {
        let t = Tensor::<f32>::new(&[3], vec![0.0, 0.0, 0.0]).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn length_mismatch_is_error() {
        let r = Tensor::<f32>::new(&[2, 3], vec![0.0; 5]);
        assert!(r.is_err());
    }

    #[test]
    fn zero_extent_is_error() {
        let r = Tensor::<f32>::new(&[2, 0], vec![]);
        assert!(r.is_err());
    }

    #[test]
    fn parameter_grad_shape_matches_value() {
        let p = Parameter::new("w", Tensor::<f32>::zeros(&[3, 4]));
        assert_eq!(p.grad().shape(), p.value().shape());
    }

    #[test]
    fn parameter_rejects_wrong_grad_shape() {
        let mut p = Parameter::new("w", Tensor::<f32>::zeros(&[3, 4]));
        assert!(p.set_grad(Tensor::zeros(&[4, 3])).is_err());
    }

    #[test]
    fn cast_roundtrip_small_values() {
        let t = Tensor::<f32>::new(&[2], vec![0.5, -1.25]).unwrap();
        let d = t.cast::<f64>();
        assert_eq!(d.data(), &[0.5, -1.25]);
    }
}
