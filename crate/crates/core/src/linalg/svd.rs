use ndarray::{Array1, Array2};

use super::to_nalgebra;
use crate::error::{Error, Result};

const SVD_MAX_ITERS: usize = 10_000;

/// `(J^T J)^+ g`, where modes whose eigenvalue `sigma^2` of `J^T J` falls
/// below `cutoff` are dropped.
pub fn svd_pseudoinverse_apply(jac: &Array2<f64>, cutoff: f64, g: &Array1<f64>) -> Result<Array1<f64>> {
    if !(cutoff >= 0.0) {
        return Err(Error::config(format!("cutoff must be >= 0, got {cutoff}")));
    }
    let (n, p) = jac.dim();
    if g.len() != p {
        return Err(Error::config(format!(
            "vector has length {}, Jacobian has {p} columns",
            g.len()
        )));
    }
    if n == 0 || p == 0 {
        return Ok(Array1::zeros(p));
    }
    let svd = to_nalgebra(jac)
        .try_svd(false, true, f64::EPSILON, SVD_MAX_ITERS)
        .ok_or_else(|| non_convergence(jac))?;
    let v_t = svd.v_t.expect("requested V^T");
    let mut out = Array1::<f64>::zeros(p);
    for (i, &sigma) in svd.singular_values.iter().enumerate() {
        let lambda = sigma * sigma;
        if lambda < cutoff || lambda == 0.0 {
            continue;
        }
        let row = v_t.row(i);
        let coef: f64 = row.iter().zip(g.iter()).map(|(a, b)| a * b).sum::<f64>() / lambda;
        for (o, v) in out.iter_mut().zip(row.iter()) {
            *o += coef * v;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("pseudoinverse produced non-finite values"));
    }
    Ok(out)
}

/// Singular values of `jac` in descending order.
pub fn singular_values(jac: &Array2<f64>) -> Result<Array1<f64>> {
    if jac.is_empty() {
        return Ok(Array1::zeros(0));
    }
    let svd = to_nalgebra(jac)
        .try_svd(false, false, f64::EPSILON, SVD_MAX_ITERS)
        .ok_or_else(|| non_convergence(jac))?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(Array1::from(s))
}

fn non_convergence(jac: &Array2<f64>) -> Error {
    let fro = jac.iter().map(|v| v * v).sum::<f64>().sqrt();
    let max = jac.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Error::numerical(format!(
        "SVD did not converge for a {}x{} matrix (Frobenius norm {fro:e}, max |entry| {max:e}, finite: {})",
        jac.nrows(),
        jac.ncols(),
        jac.iter().all(|v| v.is_finite())
    ))
}
