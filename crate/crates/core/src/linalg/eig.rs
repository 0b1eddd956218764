use ndarray::{Array1, Array2};

use super::to_nalgebra;
use crate::error::{Error, Result};

/// Eigen-decomposition `A = V diag(lambda) V^T` of a symmetric matrix,
/// eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SpectrumDecomposition {
    pub eigenvalues: Array1<f64>,
    /// Orthonormal eigenvectors stored as columns.
    pub eigenvectors: Array2<f64>,
}

impl SpectrumDecomposition {
    /// `V diag(lambda) V^T`
    pub fn reconstruct(&self) -> Array2<f64> {
        let scaled = &self.eigenvectors * &self.eigenvalues.view().insert_axis(ndarray::Axis(0));
        scaled.dot(&self.eigenvectors.t())
    }

    /// Coefficients of `v` in the eigenbasis, `V^T v`.
    pub fn project(&self, v: &Array1<f64>) -> Array1<f64> {
        self.eigenvectors.t().dot(v)
    }
}

pub fn symmetric_eig(a: &Array2<f64>) -> Result<SpectrumDecomposition> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::config(format!("matrix is not square: {:?}", a.dim())));
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    if asym > 1e-10 * scale {
        return Err(Error::config(format!(
            "matrix is not symmetric: max |A - A^T| = {asym:e} vs scale {scale:e}"
        )));
    }
    if n == 0 {
        return Ok(SpectrumDecomposition {
            eigenvalues: Array1::zeros(0),
            eigenvectors: Array2::zeros((0, 0)),
        });
    }
    let eig = to_nalgebra(a)
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::numerical(format!("symmetric eigensolver did not converge ({n}x{n})")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues = Array1::from_iter(order.iter().map(|&i| eig.eigenvalues[i]));
    let eigenvectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    Ok(SpectrumDecomposition {
        eigenvalues,
        eigenvectors,
    })
}
