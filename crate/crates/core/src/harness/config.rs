use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::autodiff::DEFAULT_MEMORY_BUDGET;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::models::MlpSpec;
use crate::optim::PhasePlan;
use crate::tasks::{
    gen_discont_2d, gen_modular_addition, gen_polynomial_regression, gen_sine_sum_1d, load_mnist,
    unit_square_grid, discont_2d, Dataset, MnistTargets, Split,
};
use crate::tensor::Tensor2;

/// Which dataset to build and with what parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    #[serde(rename = "sine_sum_1d")]
    SineSum1d {
        points: usize,
    },
    #[serde(rename = "discont_2d")]
    Discont2d {
        points: usize,
        /// Side of the uniform evaluation grid used for frequency errors.
        grid_side: usize,
        data_seed: u64,
    },
    ModularAddition {
        modulus: usize,
        train_fraction: f64,
        data_seed: u64,
    },
    PolynomialRegression {
        dim: usize,
        train_points: usize,
        test_points: usize,
        epsilon: f64,
        data_seed: u64,
    },
    Mnist {
        /// Directory holding `train-*-idx?-ubyte` and `t10k-*-idx?-ubyte`.
        data_dir: PathBuf,
        train_points: usize,
        /// Test rows to keep; all of them when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_points: Option<usize>,
        targets: MnistTargets,
        subset_seed: u64,
    },
}

impl TaskConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::SineSum1d { .. } => "sine_sum_1d",
            TaskConfig::Discont2d { .. } => "discont_2d",
            TaskConfig::ModularAddition { .. } => "modular_addition",
            TaskConfig::PolynomialRegression { .. } => "polynomial_regression",
            TaskConfig::Mnist { .. } => "mnist",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |what: &str, v: usize| {
            if v == 0 {
                Err(Error::config(format!("task.{what} must be positive")))
            } else {
                Ok(())
            }
        };
        match self {
            TaskConfig::SineSum1d { points } => {
                if *points < 2 {
                    return Err(Error::config("task.points must be at least 2"));
                }
            }
            TaskConfig::Discont2d {
                points, grid_side, ..
            } => {
                positive("points", *points)?;
                positive("grid_side", *grid_side)?;
            }
            TaskConfig::ModularAddition {
                modulus,
                train_fraction,
                ..
            } => {
                if *modulus < 2 {
                    return Err(Error::config("task.modulus must be at least 2"));
                }
                if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                    return Err(Error::config(format!(
                        "task.train_fraction must lie in (0, 1), got {train_fraction}"
                    )));
                }
            }
            TaskConfig::PolynomialRegression {
                dim,
                train_points,
                test_points,
                epsilon,
                ..
            } => {
                positive("dim", *dim)?;
                positive("train_points", *train_points)?;
                positive("test_points", *test_points)?;
                if !(*epsilon >= 0.0 && epsilon.is_finite()) {
                    return Err(Error::config("task.epsilon must be >= 0"));
                }
            }
            TaskConfig::Mnist {
                train_points,
                test_points,
                ..
            } => {
                positive("train_points", *train_points)?;
                if let Some(t) = test_points {
                    positive("test_points", *t)?;
                }
            }
        }
        Ok(())
    }

    /// `(input width, target width)` the task produces.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            TaskConfig::SineSum1d { .. } => (1, 1),
            TaskConfig::Discont2d { .. } => (2, 1),
            TaskConfig::ModularAddition { modulus, .. } => (2 * modulus, *modulus),
            TaskConfig::PolynomialRegression { dim, .. } => (*dim, 1),
            TaskConfig::Mnist { targets, .. } => (
                784,
                match targets {
                    MnistTargets::OneHotMse => 10,
                    MnistTargets::ClassIndex => 1,
                },
            ),
        }
    }

    /// Whether the task provides a uniform grid for frequency errors.
    pub fn has_frequency_probe(&self) -> bool {
        matches!(self, TaskConfig::SineSum1d { .. } | TaskConfig::Discont2d { .. })
    }

    pub fn load(&self) -> Result<TaskData> {
        self.validate()?;
        Ok(match self {
            TaskConfig::SineSum1d { points } => TaskData {
                train: gen_sine_sum_1d(*points)?,
                test: None,
                probe: FrequencyProbe::TrainGrid,
            },
            TaskConfig::Discont2d {
                points,
                grid_side,
                data_seed,
            } => {
                let grid = unit_square_grid(*grid_side)?;
                let targets = grid.as_slice().chunks(2).map(|p| discont_2d(p[0], p[1])).collect();
                TaskData {
                    train: gen_discont_2d(*points, *data_seed)?,
                    test: None,
                    probe: FrequencyProbe::Grid2d {
                        grid,
                        targets,
                        side: *grid_side,
                    },
                }
            }
            TaskConfig::ModularAddition {
                modulus,
                train_fraction,
                data_seed,
            } => {
                let (train, test) = gen_modular_addition(*modulus, *train_fraction, *data_seed)?;
                TaskData {
                    train,
                    test: Some(test),
                    probe: FrequencyProbe::None,
                }
            }
            TaskConfig::PolynomialRegression {
                dim,
                train_points,
                test_points,
                epsilon,
                data_seed,
            } => {
                let (train, test) =
                    gen_polynomial_regression(*dim, *train_points, *test_points, *epsilon, *data_seed)?;
                TaskData {
                    train,
                    test: Some(test),
                    probe: FrequencyProbe::None,
                }
            }
            TaskConfig::Mnist {
                data_dir,
                train_points,
                test_points,
                targets,
                subset_seed,
            } => {
                let train = load_mnist(
                    &data_dir.join("train-images-idx3-ubyte"),
                    &data_dir.join("train-labels-idx1-ubyte"),
                    Some(*train_points),
                    *subset_seed,
                    *targets,
                )?;
                let test = load_mnist(
                    &data_dir.join("t10k-images-idx3-ubyte"),
                    &data_dir.join("t10k-labels-idx1-ubyte"),
                    *test_points,
                    *subset_seed,
                    *targets,
                )?
                .with_split(Split::Test);
                TaskData {
                    train,
                    test: Some(test),
                    probe: FrequencyProbe::None,
                }
            }
        })
    }
}

/// Where frequency-space errors are measured.
#[derive(Debug, Clone)]
pub enum FrequencyProbe {
    None,
    /// The training inputs already form a uniform 1-D grid.
    TrainGrid,
    /// A `side x side` grid of the unit square with its exact targets.
    Grid2d {
        grid: Tensor2,
        targets: Vec<f64>,
        side: usize,
    },
}

/// Materialized datasets for one experiment.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub probe: FrequencyProbe,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralLogging {
    /// Frequency modes `e_0..e_{m-1}` logged per row; 0 disables them.
    pub fft_modes: usize,
    /// NTK eigenvalues every this many iterations (on logged rows); 0 disables.
    pub ntk_every: u64,
}

/// A complete, resolved experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub seeds: Vec<u64>,
    pub log_every: u64,
    /// Multiplier applied to the initial parameters.
    #[serde(default = "unit")]
    pub init_scale: f64,
    pub loss: LossKind,
    /// Rows per step; full batch when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Record elapsed wall-clock time in the `wall_ms` column. Off by
    /// default so that reruns write byte-identical files.
    #[serde(default)]
    pub wall_clock: bool,
    #[serde(default = "default_budget")]
    pub memory_budget: u64,
    #[serde(default)]
    pub spectral: SpectralLogging,
    pub task: TaskConfig,
    pub model: MlpSpec,
    pub phases: PhasePlan,
}

fn unit() -> f64 {
    1.0
}

fn default_budget() -> u64 {
    DEFAULT_MEMORY_BUDGET
}

impl ExperimentConfig {
    /// Checks every invariant that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::config("id must be nonempty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must be nonempty"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be >= 1"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("init_scale must be > 0"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("batch_size must be >= 1"));
        }
        self.task.validate()?;
        self.model.validate()?;
        self.phases.validate()?;
        let (din, dout) = self.task.shape();
        if self.model.input_dim() != din {
            return Err(Error::config(format!(
                "task {} has {din} inputs but the model takes {}",
                self.task.name(),
                self.model.input_dim()
            )));
        }
        let out_ok = match self.loss {
            LossKind::Mse => self.model.output_dim() == dout,
            LossKind::CrossEntropy => dout == 1 || dout == self.model.output_dim(),
        };
        if !out_ok {
            return Err(Error::config(format!(
                "task {} has {dout} target columns, incompatible with {} model outputs under {:?}",
                self.task.name(),
                self.model.output_dim(),
                self.loss
            )));
        }
        if self.spectral.fft_modes > 0 && !self.task.has_frequency_probe() {
            return Err(Error::config(format!(
                "spectral.fft_modes needs a grid task, {} has none",
                self.task.name()
            )));
        }
        if self.spectral.fft_modes > 0 && self.model.output_dim() != 1 {
            return Err(Error::config("spectral.fft_modes needs a single-output model"));
        }
        let rows = self.train_rows();
        let batch = self.batch_size.map_or(rows, |b| b.min(rows));
        for (i, phase) in self.phases.phases().iter().enumerate() {
            phase
                .optimizer
                .check_feasible(
                    self.loss,
                    batch * self.model.output_dim(),
                    self.model.num_params(),
                    self.memory_budget,
                )
                .map_err(|e| match e {
                    Error::Config(m) => Error::config(format!("phase {i}: {m}")),
                    other => other,
                })?;
        }
        Ok(())
    }

    /// Training rows the task will produce, known without loading data.
    pub fn train_rows(&self) -> usize {
        match &self.task {
            TaskConfig::SineSum1d { points } => *points,
            TaskConfig::Discont2d { points, .. } => *points,
            TaskConfig::ModularAddition {
                modulus,
                train_fraction,
                ..
            } => ((modulus * modulus) as f64 * train_fraction).floor() as usize,
            TaskConfig::PolynomialRegression { train_points, .. } => *train_points,
            TaskConfig::Mnist { train_points, .. } => *train_points,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot encode config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("bad config: {}", e.message())))
    }
}
