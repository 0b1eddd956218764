use std::ops::Deref;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Row-major batch of real vectors: one sample (or Jacobian row) per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2(Array2<f64>);

impl Tensor2 {
    /// Wraps an array after checking every entry is finite.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(format!(
                "tensor entry {pos} is not finite"
            )));
        }
        Ok(Tensor2(standard(data)))
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::config(format!(
                "tensor data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        let arr = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::config(e.to_string()))?;
        Tensor2::new(arr)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::config("ragged rows"));
        }
        let flat = rows.iter().flatten().copied().collect();
        Tensor2::from_vec(rows.len(), cols, flat)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2(Array2::zeros((rows, cols)))
    }

    /// Internal constructor for arrays produced by finite arithmetic.
    pub(crate) fn wrap(data: Array2<f64>) -> Self {
        Tensor2(standard(data))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    /// Row-major flat view of the entries.
    pub fn as_slice(&self) -> &[f64] {
        self.0
            .as_slice()
            .expect("Tensor2 is always stored in standard layout")
    }

    /// Selects a subset of rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor2 {
        Tensor2(self.0.select(ndarray::Axis(0), idx))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }
}

impl Deref for Tensor2 {
    type Target = Array2<f64>;

    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

fn standard(data: Array2<f64>) -> Array2<f64> {
    if data.is_standard_layout() {
        data
    } else {
        data.as_standard_layout().into_owned()
    }
}
