use ndarray::Array1;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Array1<f64>,
    pub iterations: usize,
    /// `||A x - b||` from the recursively updated residual.
    pub residual_norm: f64,
    /// Whether `residual_norm <= threshold * ||b||` was reached.
    pub converged: bool,
}

/// Conjugate gradient for `A x = b` with `A` symmetric positive definite,
/// given only through `apply_a`. Starts from `x = 0`.
pub fn conjugate_gradient<F>(
    mut apply_a: F,
    b: &Array1<f64>,
    max_iters: usize,
    threshold: f64,
) -> Result<CgOutcome>
where
    F: FnMut(&Array1<f64>) -> Result<Array1<f64>>,
{
    let b_norm = b.dot(b).sqrt();
    if !b_norm.is_finite() {
        return Err(Error::numerical("CG right-hand side is not finite"));
    }
    let mut x = Array1::zeros(b.len());
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            residual_norm: 0.0,
            converged: true,
        });
    }
    let target = threshold * b_norm;
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = b_norm * b_norm;
    let mut iterations = 0;
    while iterations < max_iters {
        let ap = apply_a(&p)?;
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            if pap.is_finite() && rr.sqrt() <= target {
                break;
            }
            return Err(Error::numerical(format!(
                "CG breakdown at iteration {iterations}: p^T A p = {pap:e}"
            )));
        }
        let alpha = rr / pap;
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        iterations += 1;
        let rr_new = r.dot(&r);
        if !rr_new.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!(
                "CG produced a non-finite iterate at iteration {iterations}"
            )));
        }
        if rr_new.sqrt() <= target {
            rr = rr_new;
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        p *= beta;
        p += &r;
    }
    let residual_norm = rr.sqrt();
    Ok(CgOutcome {
        x,
        iterations,
        residual_norm,
        converged: residual_norm <= target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn identity_converges_in_one_step() {
        let b = array![1.0, -2.0, 3.5];
        let out = conjugate_gradient(|v| Ok(v.clone()), &b, 10, 1e-12).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
        assert!((&out.x - &b).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn zero_rhs() {
        let out = conjugate_gradient(|v| Ok(v * 2.0), &Array1::zeros(4), 10, 1e-6).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ten_distinct_eigenvalues_in_ten_steps() {
        let d = Array1::from_iter((1..=10).map(|v| v as f64));
        let b = Array1::ones(10);
        let out = conjugate_gradient(|v| Ok(v * &d), &b, 10, 1e-14).unwrap();
        assert!(out.iterations <= 10);
        let exact = b.mapv(|v| v) / &d;
        assert!((&out.x - &exact).iter().all(|e| e.abs() < 1e-8));
    }

    #[test]
    fn a_norm_error_is_monotone() {
        let g = crate::linalg::testutil::random_matrix(12, 12, 3);
        let a: Array2<f64> = g.t().dot(&g) + Array2::<f64>::eye(12) * 0.1;
        let b = crate::linalg::testutil::random_vector(12, 4);
        let exact = crate::linalg::testutil::gauss_jordan_inverse(&a).dot(&b);
        let mut prev = f64::INFINITY;
        for k in 0..=12 {
            let out = conjugate_gradient(|v| Ok(a.dot(v)), &b, k, 0.0).unwrap();
            let e = &out.x - &exact;
            let a_norm = e.dot(&a.dot(&e)).sqrt();
            assert!(a_norm <= prev * (1.0 + 1e-12) + 1e-14, "iteration {k}");
            prev = a_norm;
        }
    }

    #[test]
    fn non_finite_operator_is_an_error() {
        let b = array![1.0, 1.0];
        let e = conjugate_gradient(|v| Ok(v * f64::NAN), &b, 5, 1e-6).unwrap_err();
        assert!(matches!(e, Error::Numerical(_)));
    }
}
