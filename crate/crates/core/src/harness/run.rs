use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::{ExperimentConfig, FrequencyProbe, TaskData};
use super::metrics::{write_metrics, Manifest, MetricsRecord, RunStatus, LIBRARY_VERSION, SCHEMA_VERSION};
use super::registry::Recipe;
use crate::autodiff::JacobianOperator;
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eig, LinearOperator};
use crate::loss::{accuracy, LossKind};
use crate::models::{apply, init_params, ParamVector};
use crate::optim::{run_phases, TrainingEvent, TrainingProblem};
use crate::spectral::{condition_numbers, fft_mode_error, fft_mode_error_2d};
use crate::tasks::Dataset;

/// Where a configuration came from; copied into every manifest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub registry_id: Option<String>,
    pub recipe: Option<Recipe>,
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Runs go to `<output_root>/<id>/seed-<seed>/`.
    pub output_root: PathBuf,
    /// Seeds trained concurrently; 1 runs them one after another.
    pub parallel_seeds: usize,
    pub provenance: Provenance,
}

impl RunOptions {
    pub fn new(output_root: impl Into<PathBuf>) -> Self {
        RunOptions {
            output_root: output_root.into(),
            parallel_seeds: 1,
            provenance: Provenance::default(),
        }
    }
}

/// In-memory result of training one seed.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    pub phase_boundaries: Vec<u64>,
    pub status: RunStatus,
    pub final_params: ParamVector,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub rows: usize,
    pub status: RunStatus,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub id: String,
    pub runs: Vec<SeedRun>,
}

impl RunSummary {
    pub fn all_completed(&self) -> bool {
        self.runs.iter().all(|r| r.status == RunStatus::Completed)
    }

    pub fn metrics_paths(&self) -> Vec<PathBuf> {
        self.runs.iter().map(|r| r.dir.join("metrics.csv")).collect()
    }
}

struct Evaluator<'a> {
    config: &'a ExperimentConfig,
    data: &'a TaskData,
}

impl Evaluator<'_> {
    fn loss_and_acc(&self, params: &ParamVector, d: &Dataset) -> Result<(f64, Option<f64>)> {
        let f = apply(&self.config.model, params, &d.inputs)?;
        let loss = self.config.loss.value(&f, &d.targets)?;
        let acc = if self.is_classification() {
            accuracy(&f, &d.targets)?
        } else {
            None
        };
        Ok((loss, acc))
    }

    fn is_classification(&self) -> bool {
        self.config.loss == LossKind::CrossEntropy || self.config.model.output_dim() > 1
    }

    fn mode_errors(&self, params: &ParamVector) -> Result<Vec<f64>> {
        let m = self.config.spectral.fft_modes;
        if m == 0 {
            return Ok(Vec::new());
        }
        match &self.data.probe {
            FrequencyProbe::None => Ok(Vec::new()),
            FrequencyProbe::TrainGrid => {
                let d = &self.data.train;
                let f = apply(&self.config.model, params, &d.inputs)?;
                let r: Vec<f64> = f.as_slice().iter().zip(d.targets.as_slice()).map(|(a, b)| a - b).collect();
                fft_mode_error(&r, m)
            }
            FrequencyProbe::Grid2d {
                grid,
                targets,
                side,
            } => {
                let f = apply(&self.config.model, params, grid)?;
                let r: Vec<f64> = f.as_slice().iter().zip(targets).map(|(a, b)| a - b).collect();
                fft_mode_error_2d(&r, *side, m)
            }
        }
    }

    /// Extreme eigenvalues of the training-set NTK, normalized like the
    /// loss, plus the condition numbers at damping `mu`.
    fn spectrum(&self, params: &ParamVector, mu: Option<f64>) -> Result<[Option<f64>; 4]> {
        let x = &self.data.train.inputs;
        let jac = JacobianOperator::from_model(&self.config.model, params, x)?
            .scaled(1.0 / (x.rows() as f64).sqrt())
            .with_budget(self.config.memory_budget);
        let eig = symmetric_eig(&ntk_matrix_of(&jac)?)?;
        let lmax = eig.eigenvalues[0];
        let lmin = eig.eigenvalues[eig.eigenvalues.len() - 1];
        let (kgd, klm) = match condition_numbers(lmin, lmax, mu.unwrap_or(0.0)) {
            Ok((g, l)) => (Some(g), mu.map(|_| l)),
            Err(_) => (None, None),
        };
        Ok([Some(lmax), Some(lmin), kgd, klm])
    }
}

fn ntk_matrix_of(jac: &JacobianOperator) -> Result<ndarray::Array2<f64>> {
    let k = jac.gram()?;
    // symmetrize like `ntk_matrix` does for dense Jacobians
    Ok((&k + &k.t()) * 0.5)
}

/// Trains one seed and returns its metric rows. Numerical failures end the
/// run with a failure row instead of an error.
pub fn run_seed(config: &ExperimentConfig, seed: u64, data: &TaskData) -> Result<SeedOutcome> {
    config.validate()?;
    let spec = &config.model;
    let params = init_params(spec, seed, config.init_scale)?;
    let eval = Evaluator { config, data };
    let problem = TrainingProblem {
        spec,
        x: &data.train.inputs,
        y: &data.train.targets,
        loss: config.loss,
        batch_size: config.batch_size,
        shuffle_seed: seed,
        budget: config.memory_budget,
    };
    let total = config.phases.total_iterations();
    let start = Instant::now();
    let mut records = Vec::new();
    let mut last = (0u64, 0usize);
    let mut last_params = params.clone();
    let result = run_phases(&config.phases, &problem, params, |event| {
        let TrainingEvent::Step {
            iteration,
            phase,
            params,
            report,
        } = event
        else {
            return Ok(());
        };
        last = (iteration, phase);
        if iteration % config.log_every != 0 && iteration != total {
            return Ok(());
        }
        let (train_loss, train_acc) = eval.loss_and_acc(params, &data.train)?;
        if !train_loss.is_finite() {
            return Err(Error::numerical(format!("training loss is {train_loss}")));
        }
        let (test_loss, test_acc) = match &data.test {
            Some(t) => {
                let (l, a) = eval.loss_and_acc(params, t)?;
                (Some(l), a)
            }
            None => (None, None),
        };
        let ntk_every = config.spectral.ntk_every;
        let [lambda_max, lambda_min, kappa_gd, kappa_lm] = if ntk_every > 0 && iteration % ntk_every == 0 {
            eval.spectrum(params, report.damping)?
        } else {
            [None; 4]
        };
        records.push(MetricsRecord {
            iteration,
            phase,
            train_loss,
            test_loss,
            train_acc,
            test_acc,
            weight_norm: params.norm(),
            mode_errors: eval.mode_errors(params)?,
            lambda_max,
            lambda_min,
            kappa_gd,
            kappa_lm,
            wall_ms: config
                .wall_clock
                .then(|| start.elapsed().as_secs_f64() * 1e3),
        });
        last_params = params.clone();
        Ok(())
    });
    let (status, final_params) = match result {
        Ok(p) => (RunStatus::Completed, p),
        Err(Error::Numerical(message)) => {
            let iteration = last.0 + 1;
            records.push(MetricsRecord {
                iteration,
                phase: last.1,
                train_loss: f64::NAN,
                weight_norm: f64::NAN,
                mode_errors: vec![f64::NAN; config.spectral.fft_modes],
                ..Default::default()
            });
            (RunStatus::Failed { iteration, message }, last_params)
        }
        Err(e) => return Err(e),
    };
    Ok(SeedOutcome {
        seed,
        records,
        phase_boundaries: config.phases.boundaries(),
        status,
        final_params,
    })
}

/// Directory for one seed of an experiment.
pub fn seed_dir(root: &Path, id: &str, seed: u64) -> PathBuf {
    root.join(id).join(format!("seed-{seed}"))
}

fn write_seed(config: &ExperimentConfig, opts: &RunOptions, outcome: &SeedOutcome) -> Result<SeedRun> {
    let dir = seed_dir(&opts.output_root, &config.id, outcome.seed);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_metrics(&dir.join("metrics.csv"), &outcome.records, config.spectral.fft_modes)?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        library_version: LIBRARY_VERSION.to_string(),
        registry_id: opts.provenance.registry_id.clone(),
        seed: outcome.seed,
        overrides: opts.provenance.overrides.clone(),
        recipe: opts.provenance.recipe.clone(),
        config: config.clone(),
        phase_boundaries: outcome.phase_boundaries.clone(),
        rows: outcome.records.len(),
        status: outcome.status.clone(),
    };
    manifest.write(&dir.join("manifest.json"))?;
    Ok(SeedRun {
        seed: outcome.seed,
        dir,
        rows: outcome.records.len(),
        status: outcome.status.clone(),
    })
}

/// Trains every configured seed and writes `metrics.csv` plus
/// `manifest.json` for each.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    let data = config.task.load()?;
    let job = |seed: &u64| -> Result<SeedRun> {
        let outcome = run_seed(config, *seed, &data)?;
        write_seed(config, opts, &outcome)
    };
    let runs = crate::par::map_bounded(&config.seeds, opts.parallel_seeds, job)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(RunSummary {
        id: config.id.clone(),
        runs,
    })
}
