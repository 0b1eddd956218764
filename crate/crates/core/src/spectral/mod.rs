//! Spectral diagnostics: frequency-space residual errors, the empirical NTK
//! and its spectrum, per-mode decay rates of the linearized dynamics, and
//! condition numbers.

mod fft;
mod flow;

pub use fft::{fft_mode_error, fft_mode_error_2d, fft_mode_error_on_grid};
pub use flow::{linearized_flow, ModeErrorTrajectory};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{apply, MlpSpec, ParamVector};
use crate::tensor::Tensor2;

/// Number of logged frequency modes unless configured otherwise.
pub const DEFAULT_MODE_COUNT: usize = 10;

/// Continuous-time dynamics whose per-mode rate is known in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowKind {
    GradientDescent,
    LevenbergMarquardt { mu: f64 },
    GaussNewton { cutoff: f64 },
}

/// Decay rate of the error along an NTK eigenvector with eigenvalue
/// `lambda`: `lambda` for gradient descent, `lambda / (mu + lambda)` for
/// LM, and `1` or `0` for GN depending on whether `lambda` exceeds the
/// cutoff.
pub fn theory_rate(lambda: f64, kind: FlowKind) -> f64 {
    let lambda = lambda.max(0.0);
    match kind {
        FlowKind::GradientDescent => lambda,
        FlowKind::LevenbergMarquardt { mu } => {
            if lambda == 0.0 {
                0.0
            } else {
                lambda / (mu + lambda)
            }
        }
        FlowKind::GaussNewton { cutoff } => {
            if lambda > cutoff {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// `(kappa_gd, kappa_lm)` with `kappa_gd = lambda_max / lambda_min` and
/// `kappa_lm = kappa_gd (lambda_min + mu) / (lambda_max + mu)`.
pub fn condition_numbers(lambda_min: f64, lambda_max: f64, mu: f64) -> Result<(f64, f64)> {
    if !(lambda_min > 0.0) {
        return Err(Error::Domain(format!(
            "condition number needs lambda_min > 0, got {lambda_min}"
        )));
    }
    if !(mu >= 0.0) || lambda_max < lambda_min {
        return Err(Error::Domain(format!(
            "need mu >= 0 and lambda_max >= lambda_min, got mu={mu}, [{lambda_min}, {lambda_max}]"
        )));
    }
    let kappa_gd = lambda_max / lambda_min;
    let kappa_lm = kappa_gd * ((lambda_min + mu) / (lambda_max + mu));
    Ok((kappa_gd, kappa_lm))
}

/// `K = J J^T`, symmetrized to remove rounding asymmetry.
pub fn ntk_matrix(jac: &Array2<f64>) -> Array2<f64> {
    let k = jac.dot(&jac.t());
    (&k + &k.t()) * 0.5
}

/// Per-iteration spectral record.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpectralReport {
    pub iteration: u64,
    pub mode_errors: Vec<f64>,
    pub ntk_eigenvalues: Option<Vec<f64>>,
    pub theory_rates: Option<Vec<f64>>,
    pub kappa_gd: Option<f64>,
    pub kappa_lm: Option<f64>,
}

/// Least-squares slope of `ln(values)` against `iterations`, negated, so a
/// decaying series has a positive rate. Non-positive values are skipped;
/// `None` with fewer than two usable points.
pub fn decay_rate(iterations: &[f64], values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = iterations
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mv)).sum();
    Some(-sxy / sxx)
}

/// Largest-index frequency error of `f - target` along the ray
/// `{c d : c = j / n, j = 0..n}`, using `n / 2` modes. The model must have
/// a single output.
pub fn subspace_fft_error(
    spec: &MlpSpec,
    params: &ParamVector,
    target: &dyn Fn(&[f64]) -> f64,
    direction: &[f64],
    n_samples: usize,
) -> Result<f64> {
    if direction.iter().all(|v| *v == 0.0) {
        return Err(Error::config("subspace direction must be nonzero"));
    }
    if direction.len() != spec.input_dim() || spec.output_dim() != 1 {
        return Err(Error::config(
            "subspace errors need a single-output model matching the direction length",
        ));
    }
    if n_samples < 2 {
        return Err(Error::config("need at least two samples along the subspace"));
    }
    let d = direction.len();
    let mut x = Vec::with_capacity(n_samples * d);
    let mut y = Vec::with_capacity(n_samples);
    for j in 0..n_samples {
        let c = j as f64 / n_samples as f64;
        let point: Vec<f64> = direction.iter().map(|v| c * v).collect();
        y.push(target(&point));
        x.extend(point);
    }
    let f = apply(spec, params, &Tensor2::from_vec(n_samples, d, x)?)?;
    let residual: Vec<f64> = f.as_slice().iter().zip(&y).map(|(a, b)| a - b).collect();
    let m = n_samples / 2;
    let errs = fft_mode_error(&residual, m)?;
    Ok(*errs.last().unwrap_or(&0.0))
}
