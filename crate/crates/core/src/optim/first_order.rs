use ndarray::Array1;

use super::{OptimizerConfig, OptimizerKind, OptimizerState};
use crate::error::{Error, Result};
use crate::models::ParamVector;

/// `theta - eta * grad`
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, eta: f64) -> Result<ParamVector> {
    params.check_same_layout(grad)?;
    if !grad.is_finite() {
        return Err(Error::numerical("gradient contains non-finite values"));
    }
    let mut out = params.clone();
    out.axpy(-eta, grad);
    Ok(out)
}

/// One bias-corrected Adam step; for `adamw` the decoupled decay
/// `theta *= 1 - eta * wd` is applied first.
pub fn adam_step(
    state: &mut OptimizerState,
    params: &ParamVector,
    grad: &ParamVector,
    config: &OptimizerConfig,
) -> Result<ParamVector> {
    params.check_same_layout(grad)?;
    let p = params.len();
    let g = grad.values();
    let (b1, b2) = config.adam_betas;
    let m = state.first_moment.get_or_insert_with(|| Array1::zeros(p));
    if m.len() != p {
        return Err(Error::config("Adam state does not match the parameter length"));
    }
    m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
    let v = state.second_moment.get_or_insert_with(|| Array1::zeros(p));
    v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
    let m = state.first_moment.as_ref().expect("set above");
    let v = state.second_moment.as_ref().expect("set above");
    if m.iter().chain(v.iter()).any(|x| !x.is_finite()) {
        return Err(Error::numerical("Adam moments became non-finite"));
    }
    let t = (state.iteration + 1) as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let eta = config.learning_rate;
    let mut out = params.clone();
    let theta = out.values_mut();
    if config.kind == OptimizerKind::Adamw && config.weight_decay != 0.0 {
        let keep = 1.0 - eta * config.weight_decay;
        theta.mapv_inplace(|x| x * keep);
    }
    for ((th, &mi), &vi) in theta.iter_mut().zip(m.iter()).zip(v.iter()) {
        let m_hat = mi / c1;
        let v_hat = vi / c2;
        *th -= eta * m_hat / (v_hat.sqrt() + config.adam_eps);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ParamLayout;

    fn pv(values: Vec<f64>) -> ParamVector {
        ParamVector::from_vec(ParamLayout::for_widths(&[values.len() - 1, 1]), values).unwrap()
    }

    #[test]
    fn sgd_arithmetic() {
        let out = sgd_step(&pv(vec![1.0, 0.0]), &pv(vec![0.5, 0.0]), 0.1).unwrap();
        assert_eq!(out.values()[0], 0.95);
        let same = sgd_step(&pv(vec![1.0, 2.0]), &pv(vec![0.0, 0.0]), 0.1).unwrap();
        assert_eq!(same, pv(vec![1.0, 2.0]));
    }

    #[test]
    fn sgd_rejects_nan() {
        let mut g = pv(vec![0.0, 0.0]);
        g.values_mut()[0] = f64::NAN;
        assert!(sgd_step(&pv(vec![1.0, 0.0]), &g, 0.1).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut state = OptimizerState::default();
        let cfg = OptimizerConfig::adam(1e-3);
        let p = pv(vec![1.0, -2.0, 3.0]);
        let out = adam_step(&mut state, &p, &pv(vec![0.0, 0.0, 0.0]), &cfg).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn adam_first_step_has_magnitude_eta() {
        let mut state = OptimizerState::default();
        let cfg = OptimizerConfig::adam(1e-3);
        let p = pv(vec![0.0, 0.0, 0.0]);
        let g = pv(vec![0.3, -7.0, 1e-2]);
        let out = adam_step(&mut state, &p, &g, &cfg).unwrap();
        for (o, gi) in out.values().iter().zip(g.values().iter()) {
            // |g| / (|g| + eps) with eps = 1e-8
            let expected = -1e-3 * gi.signum() * gi.abs() / (gi.abs() + 1e-8);
            assert!((o - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adamw_without_decay_equals_adam() {
        let adam = OptimizerConfig::adam(1e-2);
        let adamw = OptimizerConfig::adamw(1e-2, 0.0);
        let mut sa = OptimizerState::default();
        let mut sw = OptimizerState::default();
        let mut a = pv(vec![0.4, -0.3, 1.0]);
        let mut w = a.clone();
        for k in 0..20 {
            let g = pv(vec![(k as f64).sin(), 0.1 * k as f64, -1.0]);
            a = adam_step(&mut sa, &a, &g, &adam).unwrap();
            w = adam_step(&mut sw, &w, &g, &adamw).unwrap();
            sa.iteration += 1;
            sw.iteration += 1;
        }
        assert_eq!(a, w);
    }

    #[test]
    fn adamw_decays_before_update() {
        let mut state = OptimizerState::default();
        let cfg = OptimizerConfig::adamw(0.1, 0.5);
        let out = adam_step(&mut state, &pv(vec![2.0, 0.0]), &pv(vec![0.0, 0.0]), &cfg).unwrap();
        assert!((out.values()[0] - 2.0 * 0.95).abs() < 1e-15);
    }
}
