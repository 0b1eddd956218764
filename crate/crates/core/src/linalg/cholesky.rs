use ndarray::{s, Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

const BLOCK: usize = 96;

/// Lower Cholesky factor `A = L L^T` of a symmetric positive definite
/// matrix. Right-looking blocked variant; the trailing update goes through
/// the matrix-multiply kernel, which dominates for large systems.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    /// Factors `a`, reading only its lower triangle.
    pub fn factor(mut a: Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::config(format!(
                "Cholesky needs a square matrix, got {:?}",
                a.dim()
            )));
        }
        let mut k = 0;
        while k < n {
            let b = BLOCK.min(n - k);
            factor_diagonal_block(&mut a, k, b)?;
            let rest = k + b;
            if rest < n {
                solve_panel(&mut a, k, b);
                update_trailing(&mut a, k, b);
            }
            k = rest;
        }
        for i in 0..n {
            for j in i + 1..n {
                a[[i, j]] = 0.0;
            }
        }
        Ok(Cholesky { l: a })
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &Array1<f64>) -> Result<Array1<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::config(format!(
                "right-hand side has length {}, expected {n}",
                b.len()
            )));
        }
        let l = &self.l;
        let mut y = b.to_owned();
        for i in 0..n {
            let row = l.slice(s![i, ..i]);
            let acc = dot(row, y.slice(s![..i]));
            y[i] = (y[i] - acc) / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut acc = 0.0;
            for j in i + 1..n {
                acc += l[[j, i]] * y[j];
            }
            y[i] = (y[i] - acc) / l[[i, i]];
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("Cholesky solve produced non-finite values"));
        }
        Ok(y)
    }
}

fn dot(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.dot(&b)
}

fn factor_diagonal_block(a: &mut Array2<f64>, k: usize, b: usize) -> Result<()> {
    for j in k..k + b {
        let mut d = a[[j, j]];
        for p in k..j {
            d -= a[[j, p]] * a[[j, p]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::numerical(format!(
                "matrix is not positive definite: pivot {j} is {d:e}"
            )));
        }
        let d = d.sqrt();
        a[[j, j]] = d;
        for i in j + 1..k + b {
            let mut v = a[[i, j]];
            for p in k..j {
                v -= a[[i, p]] * a[[j, p]];
            }
            a[[i, j]] = v / d;
        }
    }
    Ok(())
}

/// `A21 <- A21 L11^{-T}`
fn solve_panel(a: &mut Array2<f64>, k: usize, b: usize) {
    let n = a.nrows();
    let inv = lower_inverse(&a.slice(s![k..k + b, k..k + b]).to_owned());
    let panel = a.slice(s![k + b..n, k..k + b]).to_owned();
    let mut target = a.slice_mut(s![k + b..n, k..k + b]);
    ndarray::linalg::general_mat_mul(1.0, &panel, &inv.t(), 0.0, &mut target);
}

/// Inverse of a lower-triangular block by forward substitution.
fn lower_inverse(l: &Array2<f64>) -> Array2<f64> {
    let b = l.nrows();
    let mut inv = Array2::<f64>::zeros((b, b));
    for col in 0..b {
        inv[[col, col]] = 1.0 / l[[col, col]];
        for i in col + 1..b {
            let mut v = 0.0;
            for p in col..i {
                v -= l[[i, p]] * inv[[p, col]];
            }
            inv[[i, col]] = v / l[[i, i]];
        }
    }
    inv
}

/// `A22 <- A22 - L21 L21^T`, lower block triangle only.
fn update_trailing(a: &mut Array2<f64>, k: usize, b: usize) {
    let n = a.nrows();
    let start = k + b;
    let l21 = a.slice(s![start..n, k..k + b]).to_owned();
    let mut i0 = start;
    while i0 < n {
        let i1 = (i0 + BLOCK).min(n);
        let rows = l21.slice(s![i0 - start..i1 - start, ..]);
        let cols = l21.slice(s![..i1 - start, ..]);
        let mut target = a.slice_mut(s![i0..i1, start..i1]);
        ndarray::linalg::general_mat_mul(-1.0, &rows, &cols.t(), 1.0, &mut target);
        i0 = i1;
    }
}
