use ndarray::{Array1, Array2};

use super::{ntk_matrix, theory_rate, FlowKind};
use crate::error::{Error, Result};
use crate::linalg::{svd_pseudoinverse_apply, symmetric_eig, DenseOperator, SpectrumDecomposition};
use crate::optim::{lm_direction, CgSettings, LinearSolver};

/// Residual of a frozen-Jacobian model expressed in the eigenbasis of
/// `K = J0 J0^T`, one coefficient vector per step.
#[derive(Debug, Clone)]
pub struct ModeErrorTrajectory {
    pub spectrum: SpectrumDecomposition,
    /// `coefficients[k][i]`: residual after `k` steps along eigenvector `i`.
    pub coefficients: Vec<Array1<f64>>,
    pub residual_norms: Vec<f64>,
    /// `1 - eta * rate_i` for every mode.
    pub predicted_factors: Array1<f64>,
    /// Set when some mode grows, `|factor| > 1`.
    pub unstable: bool,
    /// Residual vectors in output space, `residuals[k]`.
    pub residuals: Vec<Array1<f64>>,
}

impl ModeErrorTrajectory {
    pub fn steps(&self) -> usize {
        self.coefficients.len().saturating_sub(1)
    }

    /// `max_{k,i} |c_i(k+1) - f_i c_i(k)| / ||e(k)||` over steps with a
    /// nonzero residual.
    pub fn max_factor_deviation(&self) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..self.steps() {
            let norm = self.residual_norms[k];
            if norm == 0.0 {
                continue;
            }
            let (a, b) = (&self.coefficients[k], &self.coefficients[k + 1]);
            for i in 0..a.len() {
                let dev = (b[i] - self.predicted_factors[i] * a[i]).abs() / norm;
                worst = worst.max(dev);
            }
        }
        worst
    }

    /// `||sum_i c_i(0) v_i - e(0)||`
    pub fn initial_reconstruction_error(&self) -> f64 {
        let v = &self.spectrum.eigenvectors;
        let back = v.dot(&self.coefficients[0]);
        let d = &back - &self.residuals[0];
        d.dot(&d).sqrt()
    }
}

/// Runs `steps` discrete updates of the model `e = e0 + J0 dtheta` with the
/// optimizer named by `kind`, recording the residual in the NTK eigenbasis.
pub fn linearized_flow(
    j0: &Array2<f64>,
    e0: &Array1<f64>,
    kind: FlowKind,
    eta: f64,
    steps: usize,
) -> Result<ModeErrorTrajectory> {
    if e0.len() != j0.nrows() {
        return Err(Error::config(format!(
            "residual has {} entries, Jacobian has {} rows",
            e0.len(),
            j0.nrows()
        )));
    }
    let spectrum = symmetric_eig(&ntk_matrix(j0))?;
    let predicted_factors = spectrum.eigenvalues.mapv(|l| 1.0 - eta * theory_rate(l, kind));
    let unstable = spectrum
        .eigenvalues
        .iter()
        .zip(predicted_factors.iter())
        .any(|(&l, f)| theory_rate(l, kind) > 0.0 && f.abs() > 1.0);
    let op = DenseOperator(j0.clone());
    let mut e = e0.clone();
    let mut coefficients = Vec::with_capacity(steps + 1);
    let mut residual_norms = Vec::with_capacity(steps + 1);
    let mut residuals = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        coefficients.push(spectrum.project(&e));
        residual_norms.push(e.dot(&e).sqrt());
        residuals.push(e.clone());
        if k == steps {
            break;
        }
        let direction = match kind {
            FlowKind::GradientDescent => j0.t().dot(&e),
            FlowKind::LevenbergMarquardt { mu } => {
                lm_direction(&op, &e, mu, LinearSolver::Smw, CgSettings::default())?.0
            }
            FlowKind::GaussNewton { cutoff } => {
                svd_pseudoinverse_apply(j0, cutoff, &j0.t().dot(&e))?
            }
        };
        e.scaled_add(-eta, &j0.dot(&direction));
    }
    Ok(ModeErrorTrajectory {
        spectrum,
        coefficients,
        residual_norms,
        predicted_factors,
        unstable,
        residuals,
    })
}
