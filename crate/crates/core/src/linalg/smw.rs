use ndarray::{Array1, Array2};

use super::{check_finite, Cholesky, LinearOperator};
use crate::error::{Error, Result};

/// `(mu I + J^T J)^{-1} g` through the Sherman-Morrison-Woodbury identity
///
/// `(mu I + J^T J)^{-1} = (1/mu) I - (1/mu^2) J^T (I + (1/mu) J J^T)^{-1} J`
///
/// so only the `n x n` system in output space is factored.
pub fn smw_solve<J: LinearOperator + ?Sized>(jac: &J, mu: f64, g: &Array1<f64>) -> Result<Array1<f64>> {
    check_mu(mu)?;
    let gram = jac.gram()?;
    smw_solve_with_gram(jac, &gram, mu, g)
}

/// Same as [`smw_solve`] with a precomputed `J J^T`.
pub fn smw_solve_with_gram<J: LinearOperator + ?Sized>(
    jac: &J,
    gram: &Array2<f64>,
    mu: f64,
    g: &Array1<f64>,
) -> Result<Array1<f64>> {
    check_mu(mu)?;
    let (n, p) = jac.shape();
    if g.len() != p {
        return Err(Error::config(format!(
            "right-hand side has length {}, operator expects {p}",
            g.len()
        )));
    }
    if gram.dim() != (n, n) {
        return Err(Error::config(format!(
            "Gram matrix is {:?}, expected {n}x{n}",
            gram.dim()
        )));
    }
    let inv_mu = 1.0 / mu;
    if n == 0 {
        return Ok(g * inv_mu);
    }
    let mut inner = gram * inv_mu;
    for i in 0..n {
        inner[[i, i]] += 1.0;
    }
    let jg = jac.apply(g)?;
    let chol = Cholesky::factor(inner)
        .map_err(|e| Error::numerical(format!("SMW inner system: {e}")))?;
    let y = chol.solve(&jg)?;
    let correction = jac.apply_transpose(&y)?;
    let mut x = g * inv_mu;
    x.scaled_add(-inv_mu * inv_mu, &correction);
    check_finite("SMW solution", &x)?;
    Ok(x)
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::config(format!("damping mu must be > 0, got {mu}")));
    }
    Ok(())
}
