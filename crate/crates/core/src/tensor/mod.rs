//! Dense row-major `f32` tensors and a define-by-run reverse-mode tape.
//!
//! Every primitive here has a fixed summation order (left to right over the
//! contracted index, accumulator starting at zero) so results can be compared
//! bitwise against naive loop implementations.

mod ops;
mod tape;

pub use ops::{
    add, avg_pool2, conv2d, conv2d_batched, elementwise, matmul, mean_over, mul, outer3, permute,
    sigmoid, sub, transpose2d, ElementwiseOp,
};
pub use tape::{CustomOp, Tape, Var};

use rand::Rng;
use std::fmt;

/// Errors raised by tensor construction and arithmetic.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: invalid axis {axis} for a rank-{rank} tensor")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("data length {len} does not match shape {dims:?}")]
    DataLength { len: usize, dims: Vec<usize> },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Ordered list of extents. An empty list is a scalar.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidShape(format!(
                "zero extent in {dims:?}"
            )));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| TensorError::InvalidShape(format!("{dims:?} overflows usize")))?;
        Ok(Shape(dims.to_vec()))
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides, last dimension fastest.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Contiguous row-major tensor of `f32`.
#[derive(Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    data: Vec<f32>,
}

impl fmt::Debug for DenseTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseTensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl DenseTensor {
    pub fn new(dims: &[usize], data: Vec<f32>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if data.len() != shape.numel() {
            return Err(TensorError::DataLength {
                len: data.len(),
                dims: dims.to_vec(),
            });
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn full(dims: &[usize], value: f32) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![value; shape.numel()];
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn ones(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 1.0)
    }

    pub fn scalar(value: f32) -> Self {
        DenseTensor {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub fn zeros_like(other: &DenseTensor) -> Self {
        DenseTensor {
            shape: other.shape.clone(),
            data: vec![0.0; other.data.len()],
        }
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f32) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let mut data = Vec::with_capacity(shape.numel());
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..shape.numel() {
            data.push(f(&idx));
            for d in (0..dims.len()).rev() {
                idx[d] += 1;
                if idx[d] < dims[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(DenseTensor { shape, data })
    }

    /// Uniform samples in `[low, high)`.
    pub fn uniform<R: Rng + ?Sized>(dims: &[usize], low: f32, high: f32, rng: &mut R) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = (0..shape.numel())
            .map(|_| if high > low { rng.gen_range(low..high) } else { low })
            .collect();
        Ok(DenseTensor { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.rank());
        let mut off = 0;
        for (i, (&ix, &d)) in index.iter().zip(self.dims()).enumerate() {
            debug_assert!(ix < d, "index {ix} out of bounds on axis {i}");
            off = off * d + ix;
        }
        off
    }

    pub fn get(&self, index: &[usize]) -> f32 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f32) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<f32> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<DenseTensor> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: self.dims().to_vec(),
                right: dims.to_vec(),
            });
        }
        Ok(DenseTensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f32) -> DenseTensor {
        self.map(|v| v * factor)
    }

    pub fn sum(&self) -> f32 {
        self.data.iter().fold(0.0, |acc, &v| acc + v)
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |acc, &v| acc.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Frobenius norm, accumulated in `f64`.
    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn add_assign(&mut self, other: &DenseTensor) {
        debug_assert_eq!(self.dims(), other.dims());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}
