//! Dense row-major tensors.
//!
//! Every activation, weight and gradient in the crate lives in a [`Tensor`].
//! The scalar type is chosen at build time: 64-bit by default, 32-bit with the
//! `single-precision` feature.

use std::fmt;

use thiserror::Error;

/// Scalar type used by every tensor in the build.
#[cfg(not(feature = "single-precision"))]
pub type Real = f64;
/// Scalar type used by every tensor in the build.
#[cfg(feature = "single-precision")]
pub type Real = f32;

/// Name of the active precision, echoed into checkpoint headers.
#[cfg(not(feature = "single-precision"))]
pub const PRECISION: &str = "f64";
#[cfg(feature = "single-precision")]
pub const PRECISION: &str = "f32";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("shape must have at least one axis and every extent must be >= 1, got {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} holds {expected} values but {found} were supplied")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("index {index:?} out of bounds for shape {shape:?}")]
    OutOfBounds {
        index: Vec<usize>,
        shape: Vec<usize>,
    },
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

fn checked_len(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn full(shape: &[usize], value: Real) -> Result<Self, TensorError> {
        let len = checked_len(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self, TensorError> {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Result<Self, TensorError> {
        Self::full(shape, 1.0)
    }

    pub fn from_values(shape: &[usize], values: Vec<Real>) -> Result<Self, TensorError> {
        let expected = checked_len(shape)?;
        if values.len() != expected {
            return Err(TensorError::LengthMismatch {
                shape: shape.to_vec(),
                expected,
                found: values.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: values,
        })
    }

    /// Zeros with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row-major flat offset of `index`.
    pub fn offset(&self, index: &[usize]) -> Result<usize, TensorError> {
        if index.len() != self.shape.len() || index.iter().zip(&self.shape).any(|(&i, &d)| i >= d) {
            return Err(TensorError::OutOfBounds {
                index: index.to_vec(),
                shape: self.shape.clone(),
            });
        }
        Ok(index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| acc * d + i))
    }

    pub fn get(&self, index: &[usize]) -> Result<Real, TensorError> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: Real) -> Result<(), TensorError> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    /// Same buffer viewed under a different shape with equal element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self, TensorError> {
        Self::from_values(shape, self.data)
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn zip_with(
        &self,
        other: &Tensor,
        f: impl Fn(Real, Real) -> Real,
    ) -> Result<Self, TensorError> {
        self.check_same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Self, TensorError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self, TensorError> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, s: Real) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(Real) -> Real) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Σ aᵢbᵢ, accumulated in 64-bit.
    pub fn inner_product(&self, other: &Tensor) -> Result<f64, TensorError> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt()
    }

    /// In-place `self += alpha * other`.
    pub fn axpy(&mut self, alpha: Real, other: &Tensor) -> Result<(), TensorError> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: Real) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Index of the largest element; ties resolve to the smallest flat index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, v) in self.data.iter().take(PREVIEW).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > PREVIEW {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
///
/// `op(a)` is `m x k`, `op(b)` is `k x n`. Transposition is expressed through
/// strides, so no copies are made.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: Real,
    a: &[Real],
    trans_a: bool,
    b: &[Real],
    trans_b: bool,
    beta: Real,
    c: &mut [Real],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: slice lengths are asserted above and the strides address a dense
    // row-major (or transposed) matrix of exactly those extents.
    unsafe {
        #[cfg(not(feature = "single-precision"))]
        let kernel = matrixmultiply::dgemm;
        #[cfg(feature = "single-precision")]
        let kernel = matrixmultiply::sgemm;
        kernel(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
