use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Batch, Optimizer, OptimizerConfig, StepReport};
use crate::autodiff::DEFAULT_MEMORY_BUDGET;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::models::{MlpSpec, ParamVector};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub optimizer: OptimizerConfig,
    pub iterations: u64,
}

/// Optimizers run back to back, each for its own number of iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhasePlan {
    phases: Vec<Phase>,
}

impl PhasePlan {
    pub fn new(phases: Vec<Phase>) -> Result<Self> {
        let plan = PhasePlan { phases };
        plan.validate()?;
        Ok(plan)
    }

    pub fn single(optimizer: OptimizerConfig, iterations: u64) -> Result<Self> {
        Self::new(vec![Phase {
            optimizer,
            iterations,
        }])
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::config("phase plan is empty"));
        }
        for (i, p) in self.phases.iter().enumerate() {
            if p.iterations == 0 {
                return Err(Error::config(format!("phase {i} has zero iterations")));
            }
            p.optimizer
                .validate()
                .map_err(|e| Error::config(format!("phase {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn phases_mut(&mut self) -> &mut [Phase] {
        &mut self.phases
    }

    pub fn total_iterations(&self) -> u64 {
        self.phases.iter().map(|p| p.iterations).sum()
    }

    /// Iterations after which each later phase begins (prefix sums).
    pub fn boundaries(&self) -> Vec<u64> {
        let mut acc = 0;
        let mut out = Vec::new();
        for p in &self.phases[..self.phases.len().saturating_sub(1)] {
            acc += p.iterations;
            out.push(acc);
        }
        out
    }
}

/// Training data and batching rule for [`run_phases`].
#[derive(Debug, Clone, Copy)]
pub struct TrainingProblem<'a> {
    pub spec: &'a MlpSpec,
    pub x: &'a Tensor2,
    pub y: &'a Tensor2,
    pub loss: LossKind,
    /// `None` or a size `>= rows` means full batch.
    pub batch_size: Option<usize>,
    pub shuffle_seed: u64,
    pub budget: u64,
}

impl<'a> TrainingProblem<'a> {
    pub fn full_batch(spec: &'a MlpSpec, x: &'a Tensor2, y: &'a Tensor2, loss: LossKind) -> Self {
        TrainingProblem {
            spec,
            x,
            y,
            loss,
            batch_size: None,
            shuffle_seed: 0,
            budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

/// Sequential passes over a fresh seeded shuffle each epoch.
#[derive(Debug, Clone)]
pub struct Batcher {
    n: usize,
    batch: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Batcher {
    pub fn new(n: usize, batch_size: Option<usize>, seed: u64) -> Self {
        let batch = batch_size.unwrap_or(n).clamp(1, n.max(1));
        Batcher {
            n,
            batch,
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: Vec::new(),
            pos: n,
        }
    }

    pub fn is_full_batch(&self) -> bool {
        self.batch >= self.n
    }

    /// Row indices of the next batch, `None` when every step is full batch.
    pub fn next_indices(&mut self) -> Option<Vec<usize>> {
        if self.is_full_batch() {
            return None;
        }
        if self.pos >= self.n {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch).min(self.n);
        let idx = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(idx)
    }
}

/// Progress notifications from [`run_phases`].
#[derive(Debug)]
pub enum TrainingEvent<'a> {
    /// Phase `phase` starts after `iteration` completed steps.
    PhaseStart { phase: usize, iteration: u64 },
    /// Step `iteration` (1-based, global) finished.
    Step {
        iteration: u64,
        phase: usize,
        params: &'a ParamVector,
        report: &'a StepReport,
    },
}

/// Runs every phase in order, carrying parameters across boundaries and
/// starting each optimizer from fresh state.
pub fn run_phases<F>(
    plan: &PhasePlan,
    problem: &TrainingProblem<'_>,
    params: ParamVector,
    mut observer: F,
) -> Result<ParamVector>
where
    F: FnMut(TrainingEvent<'_>) -> Result<()>,
{
    plan.validate()?;
    for phase in plan.phases() {
        phase.optimizer.check_feasible(
            problem.loss,
            problem.batch_size.unwrap_or(problem.x.rows()).min(problem.x.rows()) * problem.spec.output_dim(),
            problem.spec.num_params(),
            problem.budget,
        )?;
    }
    let mut batcher = Batcher::new(problem.x.rows(), problem.batch_size, problem.shuffle_seed);
    let mut params = params;
    let mut iteration = 0u64;
    for (index, phase) in plan.phases().iter().enumerate() {
        observer(TrainingEvent::PhaseStart {
            phase: index,
            iteration,
        })?;
        let mut opt = Optimizer::new(phase.optimizer.clone())?;
        for _ in 0..phase.iterations {
            let (next, report) = match batcher.next_indices() {
                None => {
                    let mut batch = Batch::new(problem.spec, problem.x, problem.y, problem.loss);
                    batch.budget = problem.budget;
                    opt.step(&params, &batch)?
                }
                Some(idx) => {
                    let bx = problem.x.select_rows(&idx);
                    let by = problem.y.select_rows(&idx);
                    let mut batch = Batch::new(problem.spec, &bx, &by, problem.loss);
                    batch.budget = problem.budget;
                    opt.step(&params, &batch)?
                }
            };
            params = next;
            iteration += 1;
            observer(TrainingEvent::Step {
                iteration,
                phase: index,
                params: &params,
                report: &report,
            })?;
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_params, Activation, InitScheme};
    use crate::optim::DampingSchedule;

    fn toy() -> (MlpSpec, Tensor2, Tensor2) {
        let spec = MlpSpec::new(vec![2, 6, 1], Activation::Tanh, InitScheme::GlorotNormal);
        let x = Tensor2::from_vec(8, 2, (0..16).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let y = Tensor2::from_vec(8, 1, (0..8).map(|i| (i as f64 * 0.9).cos()).collect()).unwrap();
        (spec, x, y)
    }

    fn losses(plan: &PhasePlan, batch: Option<usize>) -> (Vec<f64>, Vec<(usize, u64)>) {
        let (spec, x, y) = toy();
        let mut problem = TrainingProblem::full_batch(&spec, &x, &y, LossKind::Mse);
        problem.batch_size = batch;
        problem.shuffle_seed = 3;
        let p0 = init_params(&spec, 1, 1.0).unwrap();
        let mut out = Vec::new();
        let mut starts = Vec::new();
        run_phases(plan, &problem, p0, |ev| {
            match ev {
                TrainingEvent::Step { report, .. } => out.push(report.batch_loss),
                TrainingEvent::PhaseStart { phase, iteration } => starts.push((phase, iteration)),
            }
            Ok(())
        })
        .unwrap();
        (out, starts)
    }

    #[test]
    fn stateless_phases_concatenate() {
        let sgd = OptimizerConfig::sgd(0.05);
        let split = PhasePlan::new(vec![
            Phase {
                optimizer: sgd.clone(),
                iterations: 10,
            },
            Phase {
                optimizer: sgd.clone(),
                iterations: 10,
            },
        ])
        .unwrap();
        let whole = PhasePlan::single(sgd, 20).unwrap();
        assert_eq!(losses(&split, Some(3)).0, losses(&whole, Some(3)).0);
    }

    #[test]
    fn boundary_is_reported_at_prefix_sum() {
        let plan = PhasePlan::new(vec![
            Phase {
                optimizer: OptimizerConfig::lm(0.5, DampingSchedule::constant(0.1)),
                iterations: 4,
            },
            Phase {
                optimizer: OptimizerConfig::adamw(1e-3, 0.1),
                iterations: 6,
            },
        ])
        .unwrap();
        assert_eq!(plan.boundaries(), vec![4]);
        assert_eq!(plan.total_iterations(), 10);
        let (l, starts) = losses(&plan, None);
        assert_eq!(l.len(), 10);
        assert_eq!(starts, vec![(0, 0), (1, 4)]);
    }

    #[test]
    fn empty_or_zero_phases_rejected() {
        assert!(PhasePlan::new(vec![]).is_err());
        assert!(PhasePlan::single(OptimizerConfig::sgd(0.1), 0).is_err());
    }

    #[test]
    fn batcher_covers_each_epoch() {
        let mut b = Batcher::new(10, Some(4), 7);
        let mut seen: Vec<usize> = Vec::new();
        for _ in 0..3 {
            seen.extend(b.next_indices().unwrap());
        }
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert!(Batcher::new(5, None, 0).next_indices().is_none());
    }

    #[test]
    fn sgd_decreases_linear_least_squares() {
        let spec = MlpSpec::new(vec![3, 1], Activation::Identity, InitScheme::GlorotNormal);
        let x = Tensor2::from_vec(5, 3, (0..15).map(|i| ((i * 7 % 11) as f64) / 11.0).collect()).unwrap();
        let y = Tensor2::from_vec(5, 1, vec![1.0, -0.5, 0.3, 0.8, -1.2]).unwrap();
        let problem = TrainingProblem::full_batch(&spec, &x, &y, LossKind::Mse);
        let plan = PhasePlan::single(OptimizerConfig::sgd(0.05), 50).unwrap();
        let mut prev = f64::INFINITY;
        run_phases(&plan, &problem, init_params(&spec, 0, 1.0).unwrap(), |ev| {
            if let TrainingEvent::Step { report, .. } = ev {
                assert!(report.batch_loss < prev);
                prev = report.batch_loss;
            }
            Ok(())
        })
        .unwrap();
    }
}
