//! Dense and matrix-free linear algebra used by the preconditioned
//! optimizers.

mod armijo;
mod cg;
mod cholesky;
mod eig;
mod smw;
mod svd;

pub use armijo::{armijo_search, ArmijoOutcome, ArmijoParams};
pub use cg::{conjugate_gradient, CgOutcome};
pub use cholesky::Cholesky;
pub use eig::{symmetric_eig, SpectrumDecomposition};
pub use smw::{smw_solve, smw_solve_with_gram};
pub use svd::{singular_values, svd_pseudoinverse_apply};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// A linear map `R^p -> R^n` known through its products.
pub trait LinearOperator {
    /// `(n, p)`: output and input dimension.
    fn shape(&self) -> (usize, usize);

    /// `J v` for `v` in `R^p`.
    fn apply(&self, v: &Array1<f64>) -> Result<Array1<f64>>;

    /// `J^T u` for `u` in `R^n`.
    fn apply_transpose(&self, u: &Array1<f64>) -> Result<Array1<f64>>;

    /// The `n x n` matrix `J J^T`. The default builds it column by column
    /// from `n` transpose/forward product pairs.
    fn gram(&self) -> Result<Array2<f64>> {
        let (n, _) = self.shape();
        let mut out = Array2::zeros((n, n));
        let mut e = Array1::zeros(n);
        for i in 0..n {
            e[i] = 1.0;
            let col = self.apply(&self.apply_transpose(&e)?)?;
            out.column_mut(i).assign(&col);
            e[i] = 0.0;
        }
        Ok(out)
    }
}

/// A dense matrix viewed as an operator.
#[derive(Debug, Clone)]
pub struct DenseOperator(pub Array2<f64>);

impl LinearOperator for DenseOperator {
    fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    fn apply(&self, v: &Array1<f64>) -> Result<Array1<f64>> {
        if v.len() != self.0.ncols() {
            return Err(Error::config(format!(
                "operator input has length {}, expected {}",
                v.len(),
                self.0.ncols()
            )));
        }
        Ok(self.0.dot(v))
    }

    fn apply_transpose(&self, u: &Array1<f64>) -> Result<Array1<f64>> {
        if u.len() != self.0.nrows() {
            return Err(Error::config(format!(
                "operator cotangent has length {}, expected {}",
                u.len(),
                self.0.nrows()
            )));
        }
        Ok(self.0.t().dot(u))
    }

    fn gram(&self) -> Result<Array2<f64>> {
        Ok(self.0.dot(&self.0.t()))
    }
}

pub(crate) fn to_nalgebra(a: &Array2<f64>) -> nalgebra::DMatrix<f64> {
    let (r, c) = a.dim();
    nalgebra::DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

pub(crate) fn check_finite(what: &str, v: &Array1<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::numerical(format!("{what} contains non-finite values")))
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    pub fn random_vector(n: usize, seed: u64) -> Array1<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0))
    }

    /// Gauss-Jordan inverse with partial pivoting, kept independent of the
    /// factorizations under test.
    pub fn gauss_jordan_inverse(a: &Array2<f64>) -> Array2<f64> {
        let n = a.nrows();
        let mut m = a.clone();
        let mut inv = Array2::<f64>::eye(n);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs()))
                .unwrap();
            for k in 0..n {
                m.swap([col, k], [pivot, k]);
                inv.swap([col, k], [pivot, k]);
            }
            let d = m[[col, col]];
            for k in 0..n {
                m[[col, k]] /= d;
                inv[[col, k]] /= d;
            }
            for r in 0..n {
                if r != col {
                    let f = m[[r, col]];
                    if f != 0.0 {
                        for k in 0..n {
                            m[[r, k]] -= f * m[[col, k]];
                            inv[[r, k]] -= f * inv[[col, k]];
                        }
                    }
                }
            }
        }
        inv
    }

    pub fn max_rel_err(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        a.iter()
            .zip(b.iter())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
            / scale
    }
}
