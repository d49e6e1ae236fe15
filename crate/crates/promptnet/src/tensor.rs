//! Dense N-dimensional tensors of 64-bit reals.
//!
//! A [`Tensor`] is an immutable value: `shape` lists the extents (up to five
//! axes, laid out batch x channels x depth x height x width) and `data` holds
//! the elements in row-major order. All numeric computation in this crate,
//! including recorded autodiff values and gradients, flows through this type.

use std::fmt;

/// Maximum tensor rank supported by the crate.
pub const MAX_RANK: usize = 5;

/// Errors raised by tensor constructors and shape queries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TensorError {
    /// A shape contained a zero extent; all extents must be >= 1.
    ZeroExtent { axis: usize },
    /// More axes than [`MAX_RANK`].
    RankTooLarge { rank: usize },
    /// Flat data length does not match the product of the extents.
    DataLength { expected: usize, got: usize },
    /// A tensor of a different rank was expected.
    RankMismatch { expected: usize, got: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ZeroExtent { axis } => {
                write!(f, "axis {axis} has extent 0; all extents must be >= 1")
            }
            TensorError::RankTooLarge { rank } => {
                write!(f, "rank {rank} exceeds the supported maximum of {MAX_RANK}")
            }
            TensorError::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            TensorError::RankMismatch { expected, got } => {
                write!(f, "expected a rank-{expected} tensor, got rank {got}")
            }
        }
    }
}

impl std::error::Error for TensorError {}

/// Dense tensor of `f64` values in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and flat row-major data.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        let numel = Self::check_shape(shape)?;
        if data.len() != numel {
            return Err(TensorError::DataLength { expected: numel, got: data.len() });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// All-zero tensor of the given shape. Panics on an invalid shape; use
    /// [`Tensor::from_vec`] when the shape comes from untrusted input.
    pub fn zeros(shape: &[usize]) -> Self {
        let numel = Self::check_shape(shape).expect("invalid shape");
        Tensor { shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    /// Tensor of the given shape with every element set to `value`.
    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = Self::check_shape(shape).expect("invalid shape");
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    /// Rank-1 tensor holding a single scalar.
    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    fn check_shape(shape: &[usize]) -> Result<usize, TensorError> {
        if shape.len() > MAX_RANK {
            return Err(TensorError::RankTooLarge { rank: shape.len() });
        }
        let mut numel = 1usize;
        for (axis, &extent) in shape.iter().enumerate() {
            if extent == 0 {
                return Err(TensorError::ZeroExtent { axis });
            }
            numel *= extent;
        }
        Ok(numel)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() requires a one-element tensor");
        self.data[0]
    }

    /// Extents of a rank-5 tensor as (n, c, d, h, w).
    pub fn dims5(&self) -> Result<(usize, usize, usize, usize, usize), TensorError> {
        match self.shape[..] {
            [n, c, d, h, w] => Ok((n, c, d, h, w)),
            _ => Err(TensorError::RankMismatch { expected: 5, got: self.shape.len() }),
        }
    }

    /// Extents of a rank-2 tensor as (rows, cols).
    pub fn dims2(&self) -> Result<(usize, usize), TensorError> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(TensorError::RankMismatch { expected: 2, got: self.shape.len() }),
        }
    }

    /// True if every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise maximum absolute difference to another tensor of the
    /// same shape.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff requires equal shapes");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let err = Tensor::from_vec(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert_eq!(err, TensorError::DataLength { expected: 6, got: 5 });
        let t = Tensor::from_vec(&[2, 3], vec![1.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
        assert_eq!(t.shape(), &[2, 3]);
    }

    #[test]
    fn zero_extent_rejected() {
        let err = Tensor::from_vec(&[2, 0, 3], vec![]).unwrap_err();
        assert_eq!(err, TensorError::ZeroExtent { axis: 1 });
    }

    #[test]
    fn rank_limit() {
        let err = Tensor::from_vec(&[1, 1, 1, 1, 1, 1], vec![1.0]).unwrap_err();
        assert_eq!(err, TensorError::RankTooLarge { rank: 6 });
    }

    #[test]
    fn scalar_roundtrip() {
        let s = Tensor::scalar(3.5);
        assert_eq!(s.item(), 3.5);
        assert_eq!(s.shape(), &[1]);
    }
}
