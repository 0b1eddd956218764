//! Training losses expressed in output space.
//!
//! Mean squared error is written as `0.5 * ||r||^2` with the residual
//! `r = (f - y) / sqrt(B)` over the flattened `B x K` outputs, so the
//! Gauss-Newton matrix is `J^T J` for `J = dr/dtheta`. Cross-entropy is the
//! batch mean of `-log softmax(f)[label]`.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

impl LossKind {
    pub fn value(self, outputs: &Tensor2, targets: &Tensor2) -> Result<f64> {
        match self {
            LossKind::Mse => {
                check_same_shape(outputs, targets)?;
                let r = mse_residual(outputs, targets)?;
                Ok(0.5 * r.dot(&r))
            }
            LossKind::CrossEntropy => cross_entropy(outputs, targets),
        }
    }

    /// `dL/df` with the shape of `outputs`.
    pub fn output_gradient(self, outputs: &Tensor2, targets: &Tensor2) -> Result<Array2<f64>> {
        let b = outputs.rows().max(1) as f64;
        match self {
            LossKind::Mse => {
                check_same_shape(outputs, targets)?;
                Ok((outputs.as_array() - targets.as_array()) / b)
            }
            LossKind::CrossEntropy => {
                let labels = class_labels(outputs.cols(), targets)?;
                let mut p = softmax(outputs);
                for (mut row, &c) in p.axis_iter_mut(Axis(0)).zip(labels.iter()) {
                    row[c] -= 1.0;
                }
                Ok(p / b)
            }
        }
    }

    /// Output-space Hessian of the loss at `outputs`.
    pub fn output_hessian(self, outputs: &Tensor2) -> OutputHessian {
        let b = outputs.rows().max(1) as f64;
        match self {
            LossKind::Mse => OutputHessian::ScaledIdentity(1.0 / b),
            LossKind::CrossEntropy => OutputHessian::Softmax {
                probs: softmax(outputs),
                scale: 1.0 / b,
            },
        }
    }
}

/// `(f - y) / sqrt(B)`, flattened row-major.
pub fn mse_residual(outputs: &Tensor2, targets: &Tensor2) -> Result<Array1<f64>> {
    check_same_shape(outputs, targets)?;
    let scale = 1.0 / (outputs.rows().max(1) as f64).sqrt();
    Ok(outputs
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .map(|(f, y)| (f - y) * scale)
        .collect())
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax(outputs: &Tensor2) -> Array2<f64> {
    let mut p = outputs.as_array().clone();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// `diag(p) - p p^T` for one probability vector.
pub fn softmax_hessian(p: &[f64]) -> Array2<f64> {
    let k = p.len();
    Array2::from_shape_fn((k, k), |(i, j)| if i == j { p[i] - p[i] * p[j] } else { -p[i] * p[j] })
}

fn cross_entropy(outputs: &Tensor2, targets: &Tensor2) -> Result<f64> {
    let labels = class_labels(outputs.cols(), targets)?;
    if outputs.rows() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (row, &c) in outputs.as_array().axis_iter(Axis(0)).zip(labels.iter()) {
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[c];
    }
    Ok(total / outputs.rows() as f64)
}

/// Class labels from either a single index column or one-hot rows.
pub fn class_labels(num_classes: usize, targets: &Tensor2) -> Result<Vec<usize>> {
    if targets.cols() == 1 && num_classes > 1 {
        targets
            .as_slice()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && (v as usize) < num_classes {
                    Ok(v as usize)
                } else {
                    Err(Error::config(format!("label {v} is not a class index below {num_classes}")))
                }
            })
            .collect()
    } else if targets.cols() == num_classes {
        Ok(targets.as_array().axis_iter(Axis(0)).map(|r| argmax(r.iter().copied())).collect())
    } else {
        Err(Error::config(format!(
            "targets have {} columns, expected 1 or {num_classes}",
            targets.cols()
        )))
    }
}

/// Fraction of rows whose largest output matches the target class, or
/// `None` for single-output regression.
pub fn accuracy(outputs: &Tensor2, targets: &Tensor2) -> Result<Option<f64>> {
    if outputs.cols() < 2 {
        return Ok(None);
    }
    let labels = class_labels(outputs.cols(), targets)?;
    if labels.is_empty() {
        return Ok(Some(0.0));
    }
    let hits = outputs
        .as_array()
        .axis_iter(Axis(0))
        .zip(labels.iter())
        .filter(|(row, &c)| argmax(row.iter().copied()) == c)
        .count();
    Ok(Some(hits as f64 / labels.len() as f64))
}

/// First index of the maximum.
fn argmax(it: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in it.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn check_same_shape(outputs: &Tensor2, targets: &Tensor2) -> Result<()> {
    if outputs.dim() != targets.dim() {
        return Err(Error::config(format!(
            "outputs are {:?} but targets are {:?}",
            outputs.dim(),
            targets.dim()
        )));
    }
    Ok(())
}

/// Block-diagonal output-space Hessian acting on flattened `B x K` vectors.
#[derive(Debug, Clone)]
pub enum OutputHessian {
    /// `c I`
    ScaledIdentity(f64),
    /// `c (diag(p_b) - p_b p_b^T)` for every row `p_b` of `probs`.
    Softmax { probs: Array2<f64>, scale: f64 },
}

impl OutputHessian {
    pub fn apply(&self, u: &Array1<f64>) -> Array1<f64> {
        match self {
            OutputHessian::ScaledIdentity(c) => u * *c,
            OutputHessian::Softmax { probs, scale } => {
                let k = probs.ncols();
                let mut out = Array1::zeros(u.len());
                for (b, p) in probs.axis_iter(Axis(0)).enumerate() {
                    let seg = u.slice(ndarray::s![b * k..(b + 1) * k]);
                    let pu = p.dot(&seg);
                    for i in 0..k {
                        out[b * k + i] = scale * p[i] * (seg[i] - pu);
                    }
                }
                out
            }
        }
    }

    /// `F^T u` for a factor with `H = F F^T`. For the softmax block
    /// `F = diag(sqrt p) - p sqrt(p)^T`, which uses `sum(p) = 1`.
    pub fn factor_transpose_apply(&self, u: &Array1<f64>) -> Array1<f64> {
        match self {
            OutputHessian::ScaledIdentity(c) => u * c.sqrt(),
            OutputHessian::Softmax { probs, scale } => {
                let k = probs.ncols();
                let sc = scale.sqrt();
                let mut out = Array1::zeros(u.len());
                for (b, p) in probs.axis_iter(Axis(0)).enumerate() {
                    let seg = u.slice(ndarray::s![b * k..(b + 1) * k]);
                    let pu = p.dot(&seg);
                    for i in 0..k {
                        out[b * k + i] = sc * p[i].sqrt() * (seg[i] - pu);
                    }
                }
                out
            }
        }
    }

    /// `F u`
    pub fn factor_apply(&self, u: &Array1<f64>) -> Array1<f64> {
        match self {
            OutputHessian::ScaledIdentity(c) => u * c.sqrt(),
            OutputHessian::Softmax { probs, scale } => {
                let k = probs.ncols();
                let sc = scale.sqrt();
                let mut out = Array1::zeros(u.len());
                for (b, p) in probs.axis_iter(Axis(0)).enumerate() {
                    let seg = u.slice(ndarray::s![b * k..(b + 1) * k]);
                    let su: f64 = p.iter().zip(seg.iter()).map(|(pi, ui)| pi.sqrt() * ui).sum();
                    for i in 0..k {
                        out[b * k + i] = sc * (p[i].sqrt() * seg[i] - p[i] * su);
                    }
                }
                out
            }
        }
    }

    /// `F^T G F` for an `n x n` matrix `G`.
    pub(crate) fn congruence(&self, g: &Array2<f64>) -> Array2<f64> {
        match self {
            OutputHessian::ScaledIdentity(c) => g * *c,
            OutputHessian::Softmax { .. } => {
                let n = g.nrows();
                let mut left = Array2::zeros((n, n));
                for j in 0..n {
                    let col = g.column(j).to_owned();
                    left.column_mut(j).assign(&self.factor_transpose_apply(&col));
                }
                let mut out = Array2::zeros((n, n));
                for i in 0..n {
                    let row = left.row(i).to_owned();
                    out.row_mut(i).assign(&self.factor_transpose_apply(&row));
                }
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn t(rows: &[Vec<f64>]) -> Tensor2 {
        Tensor2::from_rows(rows).unwrap()
    }

    #[test]
    fn mse_value_and_gradient() {
        let f = t(&[vec![1.0], vec![3.0]]);
        let y = t(&[vec![0.0], vec![1.0]]);
        // 0.5 * (1 + 4) / 2
        assert!((LossKind::Mse.value(&f, &y).unwrap() - 1.25).abs() < 1e-15);
        let g = LossKind::Mse.output_gradient(&f, &y).unwrap();
        assert_eq!(g, array![[0.5], [1.0]]);
    }

    #[test]
    fn softmax_hessian_two_classes() {
        let h = softmax_hessian(&[0.5, 0.5]);
        assert_eq!(h, array![[0.25, -0.25], [-0.25, 0.25]]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let f = t(&[vec![0.0, 0.0, 0.0]]);
        let y = t(&[vec![2.0]]);
        let v = LossKind::CrossEntropy.value(&f, &y).unwrap();
        assert!((v - 3f64.ln()).abs() < 1e-15);
        let onehot = t(&[vec![0.0, 0.0, 1.0]]);
        assert_eq!(v, LossKind::CrossEntropy.value(&f, &onehot).unwrap());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let f = t(&[vec![0.3, -1.2, 0.7], vec![2.0, 0.1, -0.4]]);
        let y = t(&[vec![1.0], vec![0.0]]);
        let g = LossKind::CrossEntropy.output_gradient(&f, &y).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let mut plus = f.as_array().clone();
                plus[[i, j]] += h;
                let mut minus = f.as_array().clone();
                minus[[i, j]] -= h;
                let fd = (LossKind::CrossEntropy.value(&Tensor2::new(plus).unwrap(), &y).unwrap()
                    - LossKind::CrossEntropy.value(&Tensor2::new(minus).unwrap(), &y).unwrap())
                    / (2.0 * h);
                assert!((fd - g[[i, j]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn softmax_factor_reproduces_hessian() {
        let f = t(&[vec![0.3, -1.2, 0.7], vec![2.0, 0.1, -0.4]]);
        let hess = LossKind::CrossEntropy.output_hessian(&f);
        let u = array![0.1, -0.7, 0.4, 1.1, 0.2, -0.3];
        let direct = hess.apply(&u);
        let via_factor = hess.factor_apply(&hess.factor_transpose_apply(&u));
        for (a, b) in direct.iter().zip(via_factor.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        let probs = softmax(&f);
        let block = softmax_hessian(probs.row(0).as_slice().unwrap()) / 2.0;
        let seg = block.dot(&u.slice(ndarray::s![0..3]));
        for i in 0..3 {
            assert!((seg[i] - direct[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn accuracy_kinds() {
        let f = t(&[vec![0.1, 0.9], vec![0.8, 0.2], vec![0.3, 0.7]]);
        let y = t(&[vec![0.0, 1.0], vec![0.0, 1.0], vec![0.0, 1.0]]);
        assert_eq!(accuracy(&f, &y).unwrap(), Some(2.0 / 3.0));
        let scalar = t(&[vec![0.5]]);
        assert_eq!(accuracy(&scalar, &scalar).unwrap(), None);
    }

    #[test]
    fn bad_labels_are_rejected() {
        let f = t(&[vec![0.0, 0.0]]);
        assert!(LossKind::CrossEntropy.value(&f, &t(&[vec![2.0]])).is_err());
        assert!(LossKind::CrossEntropy.value(&f, &t(&[vec![0.5]])).is_err());
    }
}
