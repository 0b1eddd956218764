//! Optimizers: first-order baselines, the Levenberg-Marquardt family, and
//! phased schedules that switch between them.

mod first_order;
mod phases;
mod second_order;

pub use first_order::{adam_step, sgd_step};
pub use phases::{run_phases, Batcher, Phase, PhasePlan, TrainingEvent, TrainingProblem};
pub use second_order::{ggn_step, gn_step, lm_direction, lm_step, GgnOutcome, LossAt, WeightedJacobian};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::autodiff::{forward_with_tape, vjp, JacobianOperator, DEFAULT_MEMORY_BUDGET};
use crate::error::{Error, Result};
use crate::linalg::ArmijoParams;
use crate::loss::{mse_residual, LossKind};
use crate::models::{apply, MlpSpec, ParamVector};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Adamw,
    Lm,
    Gn,
    Ggn,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Adamw => "adamw",
            OptimizerKind::Lm => "lm",
            OptimizerKind::Gn => "gn",
            OptimizerKind::Ggn => "ggn",
        }
    }

    pub fn uses_damping(self) -> bool {
        matches!(self, OptimizerKind::Lm | OptimizerKind::Ggn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingKind {
    Constant,
    LogInterp,
}

/// Iteration-indexed damping value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DampingSchedule {
    pub kind: DampingKind,
    pub start: f64,
    #[serde(default)]
    pub end: f64,
    #[serde(default)]
    pub decay_iters: u64,
}

impl DampingSchedule {
    pub fn constant(value: f64) -> Self {
        DampingSchedule {
            kind: DampingKind::Constant,
            start: value,
            end: value,
            decay_iters: 0,
        }
    }

    /// Geometric interpolation from `start` to `end` over `decay_iters`,
    /// then `end`.
    pub fn log_interp(start: f64, end: f64, decay_iters: u64) -> Self {
        DampingSchedule {
            kind: DampingKind::LogInterp,
            start,
            end,
            decay_iters,
        }
    }

    pub fn value(&self, i: u64) -> f64 {
        match self.kind {
            DampingKind::Constant => self.start,
            DampingKind::LogInterp => {
                if i >= self.decay_iters {
                    self.end
                } else if i == 0 {
                    self.start
                } else {
                    let frac = i as f64 / self.decay_iters as f64;
                    (self.start.ln() + frac * (self.end.ln() - self.start.ln())).exp()
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        match self.kind {
            DampingKind::Constant if !ok(self.start) => Err(Error::config(format!(
                "damping must be > 0, got {}",
                self.start
            ))),
            DampingKind::LogInterp if !ok(self.start) || !ok(self.end) => Err(Error::config(format!(
                "damping start and end must be > 0, got {} and {}",
                self.start, self.end
            ))),
            _ => Ok(()),
        }
    }
}

/// `value(i)` of a schedule.
pub fn schedule_value(schedule: &DampingSchedule, i: u64) -> f64 {
    schedule.value(i)
}

/// How the damped normal equations are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolver {
    /// Sherman-Morrison-Woodbury with a dense factorization in output space.
    Smw,
    /// Matrix-free conjugate gradient in parameter space.
    Cg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CgSettings {
    pub max_iters: usize,
    pub threshold: f64,
}

impl Default for CgSettings {
    fn default() -> Self {
        CgSettings {
            max_iters: 150,
            threshold: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Decoupled decay, AdamW only.
    pub weight_decay: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    /// LM / GGN damping.
    pub damping: DampingSchedule,
    /// GN eigenvalue cutoff.
    pub cutoff: f64,
    /// `None` picks SMW for LM and CG for GGN.
    pub solver: Option<LinearSolver>,
    pub cg: CgSettings,
    /// GGN step-size search; a fixed step when absent.
    pub line_search: Option<ArmijoParams>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate: 1e-2,
            weight_decay: 0.0,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            damping: DampingSchedule::constant(1.0),
            cutoff: 1e-8,
            solver: None,
            cg: CgSettings::default(),
            line_search: None,
        }
    }
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        OptimizerConfig {
            kind,
            learning_rate,
            ..OptimizerConfig::default()
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn adamw(learning_rate: f64, weight_decay: f64) -> Self {
        OptimizerConfig {
            weight_decay,
            ..Self::new(OptimizerKind::Adamw, learning_rate)
        }
    }

    pub fn lm(learning_rate: f64, damping: DampingSchedule) -> Self {
        OptimizerConfig {
            damping,
            ..Self::new(OptimizerKind::Lm, learning_rate)
        }
    }

    pub fn gn(learning_rate: f64, cutoff: f64) -> Self {
        OptimizerConfig {
            cutoff,
            ..Self::new(OptimizerKind::Gn, learning_rate)
        }
    }

    pub fn ggn(learning_rate: f64, damping: DampingSchedule) -> Self {
        OptimizerConfig {
            damping,
            ..Self::new(OptimizerKind::Ggn, learning_rate)
        }
    }

    pub fn with_solver(mut self, solver: LinearSolver) -> Self {
        self.solver = Some(solver);
        self
    }

    pub fn with_line_search(mut self, params: ArmijoParams) -> Self {
        self.line_search = Some(params);
        self
    }

    pub fn solver(&self) -> LinearSolver {
        self.solver.unwrap_or(match self.kind {
            OptimizerKind::Ggn => LinearSolver::Cg,
            _ => LinearSolver::Smw,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        let (b1, b2) = self.adam_betas;
        if !(b1 > 0.0 && b1 < 1.0 && b2 > 0.0 && b2 < 1.0) {
            return Err(Error::config(format!("adam_betas must lie in (0, 1), got ({b1}, {b2})")));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps must be > 0"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be >= 0"));
        }
        if !(self.cutoff >= 0.0) {
            return Err(Error::config("cutoff must be >= 0"));
        }
        if self.cg.max_iters == 0 || !(self.cg.threshold >= 0.0) {
            return Err(Error::config("cg needs max_iters >= 1 and threshold >= 0"));
        }
        if let Some(ls) = self.line_search {
            if !(ls.tau > 0.0 && ls.tau < 1.0) || !(ls.c > 0.0 && ls.c < 1.0) {
                return Err(Error::config("line_search needs c and tau in (0, 1)"));
            }
        }
        if self.kind.uses_damping() {
            self.damping.validate()?;
        }
        Ok(())
    }

    /// Rejects combinations that cannot run on a problem of this size.
    pub fn check_feasible(&self, loss: LossKind, num_outputs: usize, num_params: usize, budget: u64) -> Result<()> {
        if loss != LossKind::Mse && matches!(self.kind, OptimizerKind::Lm | OptimizerKind::Gn) {
            return Err(Error::config(format!(
                "{} needs a squared-error loss; use ggn for cross-entropy",
                self.kind.name()
            )));
        }
        let dense_entries = num_outputs as u64 * num_params as u64;
        if self.kind == OptimizerKind::Gn && dense_entries.saturating_mul(8) > budget {
            return Err(Error::Resource {
                what: format!(
                    "dense {num_outputs}x{num_params} Jacobian for gn; use lm instead"
                ),
                needed: dense_entries.saturating_mul(8),
                limit: budget,
            });
        }
        let gram_bytes = (num_outputs as u64).pow(2).saturating_mul(8);
        let wants_gram = matches!(self.kind, OptimizerKind::Lm | OptimizerKind::Ggn)
            && self.solver() == LinearSolver::Smw;
        if wants_gram && gram_bytes > budget {
            return Err(Error::Resource {
                what: format!("{num_outputs}x{num_outputs} Gram matrix for the smw solver; use solver = \"cg\""),
                needed: gram_bytes,
                limit: budget,
            });
        }
        Ok(())
    }
}

/// Mutable state of one optimizer within one phase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    /// Steps taken so far in this phase.
    pub iteration: u64,
    pub first_moment: Option<Array1<f64>>,
    pub second_moment: Option<Array1<f64>>,
    /// Step size accepted by the last line search.
    pub last_step: Option<f64>,
    pub phase: usize,
}

/// Everything a step needs about the current mini-batch.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub spec: &'a MlpSpec,
    pub x: &'a Tensor2,
    pub y: &'a Tensor2,
    pub loss: LossKind,
    pub budget: u64,
}

impl<'a> Batch<'a> {
    pub fn new(spec: &'a MlpSpec, x: &'a Tensor2, y: &'a Tensor2, loss: LossKind) -> Self {
        Batch {
            spec,
            x,
            y,
            loss,
            budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    /// Mini-batch loss before the step.
    pub batch_loss: f64,
    pub step_size: f64,
    pub damping: Option<f64>,
    pub cg_iterations: Option<usize>,
    pub line_search_accepted: Option<bool>,
}

/// An optimizer configuration together with its running state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            state: OptimizerState::default(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    /// Damping used by the next step, for the kinds that have one.
    pub fn current_damping(&self) -> Option<f64> {
        self.config
            .kind
            .uses_damping()
            .then(|| self.config.damping.value(self.state.iteration))
    }

    pub fn step(&mut self, params: &ParamVector, batch: &Batch<'_>) -> Result<(ParamVector, StepReport)> {
        let cfg = &self.config;
        let (outputs, tape) = forward_with_tape(batch.spec, params, batch.x)?;
        let batch_loss = batch.loss.value(&outputs, batch.y)?;
        let eta = cfg.learning_rate;
        let mut report = StepReport {
            batch_loss,
            step_size: eta,
            damping: self.current_damping(),
            ..StepReport::default()
        };
        let next = match cfg.kind {
            OptimizerKind::Sgd | OptimizerKind::Adam | OptimizerKind::Adamw => {
                let cot = Tensor2::new(batch.loss.output_gradient(&outputs, batch.y)?)
                    .map_err(|_| Error::numerical("loss gradient is not finite"))?;
                let grad = vjp(&tape, &cot)?;
                if cfg.kind == OptimizerKind::Sgd {
                    sgd_step(params, &grad, eta)?
                } else {
                    adam_step(&mut self.state, params, &grad, cfg)?
                }
            }
            OptimizerKind::Lm | OptimizerKind::Gn => {
                if batch.loss != LossKind::Mse {
                    return Err(Error::config(format!("{} needs a squared-error loss", cfg.kind.name())));
                }
                let r = mse_residual(&outputs, batch.y)?;
                let scale = 1.0 / (batch.x.rows().max(1) as f64).sqrt();
                let jac = JacobianOperator::new(tape).scaled(scale).with_budget(batch.budget);
                if cfg.kind == OptimizerKind::Lm {
                    let mu = report.damping.expect("lm has damping");
                    let (h, cg) = lm_direction(&jac, &r, mu, cfg.solver(), cfg.cg)?;
                    report.cg_iterations = cg;
                    let mut out = params.clone();
                    out.values_mut().scaled_add(-eta, &h);
                    out
                } else {
                    gn_step(params, &jac.dense()?, &r, cfg.cutoff, eta)?
                }
            }
            OptimizerKind::Ggn => {
                let mu = report.damping.expect("ggn has damping");
                let cot = Tensor2::new(batch.loss.output_gradient(&outputs, batch.y)?)
                    .map_err(|_| Error::numerical("loss gradient is not finite"))?;
                let grad = vjp(&tape, &cot)?.into_values();
                let hessian = batch.loss.output_hessian(&outputs);
                let jac = JacobianOperator::new(tape).with_budget(batch.budget);
                let mut loss_at = |theta: &Array1<f64>| -> Result<f64> {
                    let p = params.with_values(theta.clone());
                    match apply(batch.spec, &p, batch.x) {
                        Ok(f) => batch.loss.value(&f, batch.y),
                        Err(Error::Config(_)) => Ok(f64::NAN),
                        Err(e) => Err(e),
                    }
                };
                let out = ggn_step(
                    &mut self.state,
                    params,
                    &jac,
                    &hessian,
                    &grad,
                    mu,
                    cfg,
                    Some(&mut loss_at),
                )?;
                report.step_size = out.step;
                report.cg_iterations = out.cg_iterations;
                report.line_search_accepted = out.line_search_accepted;
                out.params
            }
        };
        if !next.is_finite() {
            return Err(Error::numerical(format!(
                "{} step produced non-finite parameters at phase iteration {}",
                cfg.kind.name(),
                self.state.iteration
            )));
        }
        self.state.iteration += 1;
        Ok((next, report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_interp_schedule_points() {
        let s = DampingSchedule::log_interp(1e-2, 1e-4, 500);
        assert_eq!(s.value(0), 1e-2);
        assert!((s.value(250) - 1e-3).abs() < 1e-15);
        assert_eq!(s.value(500), 1e-4);
        assert_eq!(s.value(10_000), 1e-4);
        let t = DampingSchedule::log_interp(1.0, 1e-1, 200);
        assert!((t.value(100) - 10f64.powf(-0.5)).abs() < 1e-12);
        assert!((t.value(100) - 0.31623).abs() < 1e-5);
    }

    #[test]
    fn constant_schedule() {
        let s = DampingSchedule::constant(0.1);
        assert!((0..1000).all(|i| s.value(i) == 0.1));
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::sgd(0.0).validate().is_err());
        let mut c = OptimizerConfig::adam(1e-3);
        c.adam_betas = (0.9, 1.0);
        assert!(c.validate().is_err());
        assert!(OptimizerConfig::lm(1.0, DampingSchedule::constant(-1.0)).validate().is_err());
        assert!(OptimizerConfig::lm(1.0, DampingSchedule::constant(0.1)).validate().is_ok());
    }

    #[test]
    fn gn_over_budget_is_rejected() {
        let c = OptimizerConfig::gn(1.0, 1e-8);
        let e = c.check_feasible(LossKind::Mse, 10_000, 100_000, 1 << 30).unwrap_err();
        assert!(matches!(e, Error::Resource { .. }));
        assert!(c.check_feasible(LossKind::Mse, 100, 241, 1 << 30).is_ok());
        assert!(c.check_feasible(LossKind::CrossEntropy, 100, 241, 1 << 30).is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = OptimizerConfig::lm(1e-2, DampingSchedule::log_interp(1e-2, 1e-4, 500));
        let text = toml::to_string(&c).unwrap();
        let back: OptimizerConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        let parsed: OptimizerConfig = toml::from_str("kind = \"adamw\"\nlearning_rate = 0.001\nweight_decay = 0.1").unwrap();
        assert_eq!(parsed, OptimizerConfig::adamw(1e-3, 0.1));
    }
}
