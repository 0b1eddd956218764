//! Dataset generators and the MNIST loader.
//!
//! Every generator is a pure function of its arguments and seed.

mod mnist;

pub use mnist::{load_mnist, read_idx_images, read_idx_labels, IdxImages, MnistTargets};

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Task-specific facts carried alongside a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub task: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modulus: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Source rows kept by a subset or split, in dataset order.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub source_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor2,
    pub targets: Tensor2,
    pub split: Split,
    pub metadata: DatasetMetadata,
}

impl Dataset {
    pub fn new(inputs: Tensor2, targets: Tensor2, split: Split, metadata: DatasetMetadata) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::config(format!(
                "{} input rows but {} target rows",
                inputs.rows(),
                targets.rows()
            )));
        }
        Ok(Dataset {
            inputs,
            targets,
            split,
            metadata,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}

/// `(1/3) sum_{k=1..3} k sin((2k+1) pi x - k)`
pub fn sine_sum(x: f64) -> f64 {
    (1..=3)
        .map(|k| {
            let k = k as f64;
            k * ((2.0 * k + 1.0) * PI * x - k).sin()
        })
        .sum::<f64>()
        / 3.0
}

/// `n` points `i / (n - 1)` on `[0, 1]` labelled with [`sine_sum`].
pub fn gen_sine_sum_1d(n: usize) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::config("the sine task needs at least two grid points"));
    }
    let h = 1.0 / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    let ys = xs.iter().map(|&x| sine_sum(x)).collect();
    Dataset::new(
        Tensor2::from_vec(n, 1, xs)?,
        Tensor2::from_vec(n, 1, ys)?,
        Split::Train,
        DatasetMetadata {
            task: "sine_sum_1d".into(),
            ..Default::default()
        },
    )
}

/// Piecewise-constant target on the unit square. Branches are tried in
/// order with strict inequalities.
pub fn discont_2d(x: f64, y: f64) -> f64 {
    if x + y < 0.5 {
        1.0
    } else if x + y > 1.5 {
        2.0
    } else if x < 0.5 && y >= 0.5 {
        0.75
    } else {
        0.0
    }
}

/// `n` seeded uniform points in `[0, 1]^2` labelled with [`discont_2d`].
pub fn gen_discont_2d(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::config("the 2-D task needs at least one point"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let xs: Vec<f64> = unit.sample_iter(&mut rng).take(2 * n).collect();
    let ys = xs.chunks(2).map(|p| discont_2d(p[0], p[1])).collect();
    Dataset::new(
        Tensor2::from_vec(n, 2, xs)?,
        Tensor2::from_vec(n, 1, ys)?,
        Split::Train,
        DatasetMetadata {
            task: "discont_2d".into(),
            seed: Some(seed),
            ..Default::default()
        },
    )
}

/// `side x side` points `(i / side, j / side)`, row-major with `x` fastest,
/// matching the layout [`crate::spectral::fft_mode_error_2d`] expects.
pub fn unit_square_grid(side: usize) -> Result<Tensor2> {
    let h = 1.0 / side as f64;
    let mut pts = Vec::with_capacity(2 * side * side);
    for j in 0..side {
        for i in 0..side {
            pts.push(i as f64 * h);
            pts.push(j as f64 * h);
        }
    }
    Tensor2::from_vec(side * side, 2, pts)
}

/// All `p^2` ordered pairs `(a, b)` encoded as `onehot(a) ++ onehot(b)`
/// with target `onehot((a + b) mod p)`, shuffled by `seed` and split so the
/// training set has `floor(train_fraction * p^2)` rows.
pub fn gen_modular_addition(p: usize, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if p < 2 {
        return Err(Error::config("modulus must be at least 2"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let total = p * p;
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * total as f64).floor() as usize;
    let build = |idx: &[usize], split| -> Result<Dataset> {
        let mut x = vec![0.0; idx.len() * 2 * p];
        let mut y = vec![0.0; idx.len() * p];
        for (row, &pair) in idx.iter().enumerate() {
            let (a, b) = (pair / p, pair % p);
            x[row * 2 * p + a] = 1.0;
            x[row * 2 * p + p + b] = 1.0;
            y[row * p + (a + b) % p] = 1.0;
        }
        Dataset::new(
            Tensor2::from_vec(idx.len(), 2 * p, x)?,
            Tensor2::from_vec(idx.len(), p, y)?,
            split,
            DatasetMetadata {
                task: "modular_addition".into(),
                seed: Some(seed),
                modulus: Some(p),
                source_indices: idx.to_vec(),
                ..Default::default()
            },
        )
    };
    Ok((
        build(&order[..n_train], Split::Train)?,
        build(&order[n_train..], Split::Test)?,
    ))
}

/// Single-index regression in `d` dimensions: `x` has i.i.d. `N(0, 1/d)`
/// entries, `w` is a seeded unit vector and `y = w.x + eps (w.x)^2`.
pub fn gen_polynomial_regression(
    d: usize,
    n_train: usize,
    n_test: usize,
    eps: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if d == 0 || n_train == 0 || n_test == 0 {
        return Err(Error::config("dimension and sample counts must be positive"));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::config(format!("epsilon must be >= 0, got {eps}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = StandardNormal.sample_iter(&mut rng).take(d).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    w.iter_mut().for_each(|v| *v /= norm);
    let scale = 1.0 / (d as f64).sqrt();
    let mut draw = |n: usize, split| -> Result<Dataset> {
        let x: Vec<f64> = StandardNormal
            .sample_iter(&mut rng)
            .take(n * d)
            .map(|v: f64| v * scale)
            .collect();
        let y = x
            .chunks(d)
            .map(|row| {
                let s: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
                s + eps * s * s
            })
            .collect();
        Dataset::new(
            Tensor2::from_vec(n, d, x)?,
            Tensor2::from_vec(n, 1, y)?,
            split,
            DatasetMetadata {
                task: "polynomial_regression".into(),
                seed: Some(seed),
                epsilon: Some(eps),
                ..Default::default()
            },
        )
    };
    let train = draw(n_train, Split::Train)?;
    let test = draw(n_test, Split::Test)?;
    Ok((train, test))
}
