//! Dense row-major `f64` arrays.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A dense row-major array of 64-bit reals.
///
/// Inputs are validated at construction (extents positive, length matching
/// the shape, every value finite). Values produced by arithmetic inside the
/// crate are not re-checked; [`Tensor::is_finite`] detects NaN/Inf that
/// propagated through a computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} holds {} elements but {} were given",
                shape,
                len,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::domain(format!("element {i} is not finite")));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        let len = shape.iter().product();
        Ok(Tensor {
            shape,
            data: vec![0.0; len],
        })
    }

    /// A 1-D tensor.
    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    /// A 2-D tensor of `rows` x `cols`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Builds a tensor without validation. Used for values computed inside
    /// the crate whose shape is correct by construction.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading extent; 1 for a 1-D tensor viewed as a single row.
    pub fn rows(&self) -> usize {
        if self.shape.len() < 2 {
            1
        } else {
            self.shape[0]
        }
    }

    /// Product of all extents after the leading one.
    pub fn cols(&self) -> usize {
        if self.shape.len() < 2 {
            self.data.len()
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    /// True when no element is NaN or infinite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Gathers the listed rows into a new `[indices.len(), cols]` tensor.
    pub fn select_rows(&self, indices: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor::from_parts(vec![indices.len(), c], data)
    }

    pub(crate) fn same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{what}: expected shape {:?}, got {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_matrix(&self, cols: usize, what: &str) -> Result<usize> {
        if self.shape.len() != 2 || self.shape[1] != cols {
            return Err(Error::shape(format!(
                "{what}: expected a [m, {cols}] batch, got {:?}",
                self.shape
            )));
        }
        Ok(self.shape[0])
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::shape(format!(
            "extents must be positive and non-empty, got {shape:?}"
        )));
    }
    Ok(())
}
