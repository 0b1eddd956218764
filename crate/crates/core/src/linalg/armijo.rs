use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Backtracking constants: sufficient-decrease `c`, shrink factor `tau`,
/// and the number of shrinks tried.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmijoParams {
    pub c: f64,
    pub tau: f64,
    pub max_iters: usize,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        ArmijoParams {
            c: 1e-4,
            tau: 0.5,
            max_iters: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmijoOutcome {
    pub step: f64,
    /// Loss at the returned step, when it was finite.
    pub loss: Option<f64>,
    /// False when no candidate met the sufficient-decrease test and the
    /// smallest step was returned instead.
    pub accepted: bool,
}

/// Largest `eta0 * tau^k`, `k = 0..=max_iters`, with
/// `loss(theta + eta d) <= loss(theta) + c * eta * <g, d>`.
pub fn armijo_search<F>(
    mut loss_fn: F,
    theta: &Array1<f64>,
    direction: &Array1<f64>,
    grad: &Array1<f64>,
    params: ArmijoParams,
    eta0: f64,
) -> Result<ArmijoOutcome>
where
    F: FnMut(&Array1<f64>) -> Result<f64>,
{
    if !(params.tau > 0.0 && params.tau < 1.0) {
        return Err(Error::config("Armijo tau must lie in (0, 1)"));
    }
    if !(eta0 > 0.0) {
        return Err(Error::config("Armijo initial step must be > 0"));
    }
    let base = loss_fn(theta)?;
    let slope = grad.dot(direction);
    let mut eta = eta0;
    let mut any_finite = false;
    let mut last_loss = None;
    for k in 0..=params.max_iters {
        if k > 0 {
            eta *= params.tau;
        }
        let mut trial = theta.clone();
        trial.scaled_add(eta, direction);
        let loss = loss_fn(&trial)?;
        if loss.is_finite() {
            any_finite = true;
            last_loss = Some(loss);
            if loss <= base + params.c * eta * slope {
                return Ok(ArmijoOutcome {
                    step: eta,
                    loss: Some(loss),
                    accepted: true,
                });
            }
        } else {
            last_loss = None;
        }
    }
    if !any_finite {
        return Err(Error::numerical(
            "loss was non-finite at every Armijo candidate",
        ));
    }
    Ok(ArmijoOutcome {
        step: eta,
        loss: last_loss,
        accepted: false,
    })
}
