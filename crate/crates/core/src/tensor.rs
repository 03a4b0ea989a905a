//! Dense f64 tensors with flat row-major storage.
//!
//! A [`Tensor`] owns its data and (optionally) a gradient buffer of the same
//! length. All heavy lifting (operator recording, backpropagation) lives in
//! [`crate::tape`]; this module is just the value container plus shape
//! bookkeeping shared across the crate.

use thiserror::Error;

/// Errors raised by tensor construction and by recorded tape operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    DataLength {
        op: &'static str,
        len: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: column range {start}..{end} out of bounds for {cols} columns")]
    SliceOutOfRange {
        op: &'static str,
        start: usize,
        end: usize,
        cols: usize,
    },
    #[error("{op}: mask length {mask_len} does not match {expected} positions")]
    MaskLength {
        op: &'static str,
        mask_len: usize,
        expected: usize,
    },
    #[error("{op}: mask excludes every position")]
    AllMasked { op: &'static str },
    #[error("{op}: empty input list")]
    EmptyInputs { op: &'static str },
    #[error("log of non-positive value {value}")]
    LogDomain { value: f64 },
    #[error("backward expects a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("class target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("{op}: needs at least {min} samples, got {got}")]
    TooFewSamples {
        op: &'static str,
        min: usize,
        got: usize,
    },
    #[error("{op}: non-finite value produced from finite inputs")]
    NonFinite { op: &'static str },
}

/// Dense tensor: row-major `data` interpreted through `shape`.
///
/// `grad`, when present, is the accumulated gradient of some scalar loss with
/// respect to this tensor, laid out identically to `data`. Optimizers mutate
/// `data` in place through [`Tensor::data_mut`] and consume `grad`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Gradient buffer, same length as `data` when populated.
    pub grad: Option<Vec<f64>>,
    /// Marks the tensor as trainable; the tape computes gradients for every
    /// reachable input, but only `requires_grad` tensors receive them back.
    pub requires_grad: bool,
}

impl Tensor {
    /// Builds a tensor, validating that `data.len()` equals the shape product.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                op: "Tensor::new",
                len: data.len(),
                shape,
            });
        }
        Ok(Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            grad: None,
            requires_grad: false,
        }
    }

    /// Scalar tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            grad: None,
            requires_grad: false,
        }
    }

    /// 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        if rows.is_empty() {
            return Err(TensorError::EmptyInputs {
                op: "Tensor::from_rows",
            });
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "Tensor::from_rows",
                    lhs: vec![1, cols],
                    rhs: vec![1, row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builder-style toggle for `requires_grad`.
    pub fn with_requires_grad(mut self, yes: bool) -> Self {
        self.requires_grad = yes;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Interprets the tensor as a matrix, returning `(rows, cols)`.
    pub fn dims2(&self) -> Result<(usize, usize), TensorError> {
        if self.shape.len() != 2 {
            return Err(TensorError::RankMismatch {
                op: "dims2",
                expected: 2,
                shape: self.shape.clone(),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// Element accessor for 2-D tensors; debug-asserts bounds.
    pub fn get2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        debug_assert!(i < self.shape[0] && j < self.shape[1]);
        self.data[i * self.shape[1] + j]
    }

    /// Extracts row `i` of a 2-D (or higher, outermost-axis) tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert!(self.rank() >= 2);
        let stride: usize = self.shape[1..].iter().product();
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `true` when every pair of entries differs by at most `tol`.
pub fn approx_eq_slices(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(TensorError::DataLength { .. })
        ));
    }

    #[test]
    fn from_rows_rejects_ragged_input() {
        let err = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0]]);
        assert!(matches!(err, Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn row_and_get2_agree() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(t.row(1), &[3.0, 4.0]);
        assert_eq!(t.get2(1, 0), 3.0);
        assert_eq!(t.dims2().unwrap(), (2, 2));
    }

    #[test]
    fn identity_has_unit_diagonal() {
        let t = Tensor::identity(3);
        assert_eq!(t.get2(0, 0), 1.0);
        assert_eq!(t.get2(0, 1), 0.0);
        assert_eq!(t.data().iter().sum::<f64>(), 3.0);
    }
}
