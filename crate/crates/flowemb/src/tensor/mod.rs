//! Dense tensors and the kernel set used by the embedding network.
//!
//! Only the layers the fixed architecture needs are implemented; composite
//! blocks chain the hand-derived backward functions in reverse order rather
//! than going through a general autodiff tape.
//!
//! Activations use a channels-last layout `[batch, length, channels]` so
//! pointwise convolutions and batch statistics read contiguous rows.
//! Training state is `f32`; every kernel is generic over [`Scalar`] and can
//! be instantiated at `f64` for gradient checking.

mod conv;
mod dense;
mod matmul;
mod norm;
mod pool;

pub use conv::{conv1d_same, conv1d_same_backward};
pub use dense::{
    dropout_backward, dropout_channels, dropout_elementwise, embedding_lookup, embedding_lookup_backward, linear,
    linear_backward, one_hot, relu, relu_backward, DropoutMask,
};
pub use matmul::{matmul_abt, transpose};
pub use norm::{
    batchnorm_backward, batchnorm_eval, batchnorm_train, l2_normalize_rows,
    l2_normalize_rows_backward, BnCache, RunningStats,
};
pub use pool::{gem_pool, gem_pool_backward, GemCache};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("index {index} out of range for axis of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

/// Element types the kernels accept.
pub trait Scalar:
    Copy + PartialEq + PartialOrd + Send + Sync + std::fmt::Debug + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    /// Fused multiply-add; the single kernel primitive the matmul relies on.
    fn mul_add(self, a: Self, b: Self) -> Self;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn mul_add(self, a: Self, b: Self) -> Self {
        f32::mul_add(self, a, b)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn mul_add(self, a: Self, b: Self) -> Self {
        f64::mul_add(self, a, b)
    }
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::ZERO; len],
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(TensorError::ShapeMismatch(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self, TensorError> {
        let want: usize = shape.iter().product();
        if want != self.data.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::from_f64(x.to_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.to_f64().is_finite())
    }
}

/// Elementwise `a += b`.
pub fn add_assign<T: Scalar>(a: &mut Tensor<T>, b: &Tensor<T>) {
    assert_eq!(a.shape(), b.shape(), "add_assign shape mismatch");
    for (x, y) in a.data.iter_mut().zip(b.data.iter()) {
        *x = T::from_f64(x.to_f64() + y.to_f64());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn cast_roundtrip() {
        let t = Tensor::<f32>::from_vec(&[3], vec![1.5, -2.0, 0.25]).unwrap();
        let d: Tensor<f64> = t.cast();
        assert_eq!(d.data(), &[1.5, -2.0, 0.25]);
        let back: Tensor<f32> = d.cast();
        assert_eq!(back, t);
    }
}
