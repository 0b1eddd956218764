use ndarray::{Array1, Array2};

use super::{CgSettings, LinearSolver, OptimizerConfig, OptimizerState};
use crate::error::{Error, Result};
use crate::linalg::{
    armijo_search, conjugate_gradient, smw_solve, svd_pseudoinverse_apply, LinearOperator,
};
use crate::loss::OutputHessian;
use crate::models::ParamVector;

/// `theta - eta (mu I + J^T J)^{-1} J^T r`, solved through SMW.
pub fn lm_step<J: LinearOperator + ?Sized>(
    params: &ParamVector,
    jac: &J,
    residual: &Array1<f64>,
    mu: f64,
    eta: f64,
) -> Result<ParamVector> {
    let (h, _) = lm_direction(jac, residual, mu, LinearSolver::Smw, CgSettings::default())?;
    let mut out = params.clone();
    out.values_mut().scaled_add(-eta, &h);
    Ok(out)
}

/// `(mu I + J^T J)^{-1} J^T r` and, for the CG solver, its iteration count.
pub fn lm_direction<J: LinearOperator + ?Sized>(
    jac: &J,
    residual: &Array1<f64>,
    mu: f64,
    solver: LinearSolver,
    cg: CgSettings,
) -> Result<(Array1<f64>, Option<usize>)> {
    let g = jac.apply_transpose(residual)?;
    match solver {
        LinearSolver::Smw => Ok((smw_solve(jac, mu, &g)?, None)),
        LinearSolver::Cg => {
            if !(mu > 0.0) {
                return Err(Error::config(format!("damping mu must be > 0, got {mu}")));
            }
            let out = conjugate_gradient(
                |v| {
                    let mut w = jac.apply_transpose(&jac.apply(v)?)?;
                    w.scaled_add(mu, v);
                    Ok(w)
                },
                &g,
                cg.max_iters,
                cg.threshold,
            )?;
            Ok((out.x, Some(out.iterations)))
        }
    }
}

/// `theta - eta (J^T J)^+ J^T r`, dropping modes with `sigma^2 < cutoff`.
pub fn gn_step(
    params: &ParamVector,
    jac: &Array2<f64>,
    residual: &Array1<f64>,
    cutoff: f64,
    eta: f64,
) -> Result<ParamVector> {
    if residual.len() != jac.nrows() || params.len() != jac.ncols() {
        return Err(Error::config(format!(
            "Jacobian is {:?}, residual has {} entries and parameters {}",
            jac.dim(),
            residual.len(),
            params.len()
        )));
    }
    let g = jac.t().dot(residual);
    let h = svd_pseudoinverse_apply(jac, cutoff, &g)?;
    let mut out = params.clone();
    out.values_mut().scaled_add(-eta, &h);
    Ok(out)
}

/// `F^T J` for an output Hessian `H = F F^T`, so that
/// `(F^T J)^T (F^T J) = J^T H J`.
pub struct WeightedJacobian<'a, J: LinearOperator + ?Sized> {
    pub jac: &'a J,
    pub hessian: &'a OutputHessian,
}

impl<J: LinearOperator + ?Sized> LinearOperator for WeightedJacobian<'_, J> {
    fn shape(&self) -> (usize, usize) {
        self.jac.shape()
    }

    fn apply(&self, v: &Array1<f64>) -> Result<Array1<f64>> {
        Ok(self.hessian.factor_transpose_apply(&self.jac.apply(v)?))
    }

    fn apply_transpose(&self, u: &Array1<f64>) -> Result<Array1<f64>> {
        self.jac.apply_transpose(&self.hessian.factor_apply(u))
    }

    fn gram(&self) -> Result<Array2<f64>> {
        Ok(self.hessian.congruence(&self.jac.gram()?))
    }
}

/// Loss at a flat parameter vector, used by the line search.
pub type LossAt<'a> = &'a mut dyn FnMut(&Array1<f64>) -> Result<f64>;

#[derive(Debug, Clone)]
pub struct GgnOutcome {
    pub params: ParamVector,
    pub step: f64,
    pub cg_iterations: Option<usize>,
    /// `None` without a line search.
    pub line_search_accepted: Option<bool>,
}

/// Solves `(mu I + J^T H J) h = g` and moves to `theta - step * h`, with the
/// step from an Armijo search when the config asks for one and a loss
/// closure is given, else the learning rate.
#[allow(clippy::too_many_arguments)]
pub fn ggn_step<J: LinearOperator + ?Sized>(
    state: &mut OptimizerState,
    params: &ParamVector,
    jac: &J,
    hessian: &OutputHessian,
    grad: &Array1<f64>,
    mu: f64,
    config: &OptimizerConfig,
    loss_fn: Option<LossAt<'_>>,
) -> Result<GgnOutcome> {
    if grad.len() != params.len() {
        return Err(Error::config("gradient length does not match parameters"));
    }
    if !(mu > 0.0) {
        return Err(Error::config(format!("damping mu must be > 0, got {mu}")));
    }
    let (h, cg_iterations) = match config.solver() {
        LinearSolver::Smw => {
            let h = match hessian {
                OutputHessian::ScaledIdentity(c) if *c == 1.0 => smw_solve(jac, mu, grad)?,
                _ => smw_solve(&WeightedJacobian { jac, hessian }, mu, grad)?,
            };
            (h, None)
        }
        LinearSolver::Cg => {
            let out = conjugate_gradient(
                |v| {
                    let mut w = jac.apply_transpose(&hessian.apply(&jac.apply(v)?))?;
                    w.scaled_add(mu, v);
                    Ok(w)
                },
                grad,
                config.cg.max_iters,
                config.cg.threshold,
            )?;
            (out.x, Some(out.iterations))
        }
    };
    let (step, accepted) = match (config.line_search, loss_fn) {
        (Some(ls), Some(f)) => {
            let direction = -&h;
            let out = armijo_search(f, params.values(), &direction, grad, ls, config.learning_rate)?;
            (out.step, Some(out.accepted))
        }
        _ => (config.learning_rate, None),
    };
    state.last_step = Some(step);
    let mut next = params.clone();
    next.values_mut().scaled_add(-step, &h);
    Ok(GgnOutcome {
        params: next,
        step,
        cg_iterations,
        line_search_accepted: accepted,
    })
}
