use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// `e_i = |DFT_i(residual)| / n` for `i < m`, residual sampled on a uniform
/// grid.
pub fn fft_mode_error(residual: &[f64], m: usize) -> Result<Vec<f64>> {
    let n = residual.len();
    if m > n / 2 {
        return Err(Error::config(format!("{m} modes requested from {n} samples (at most n/2)")));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut buf: Vec<Complex64> = residual.iter().map(|&r| Complex64::new(r, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    Ok(buf[..m].iter().map(|c| c.norm() / n as f64).collect())
}

/// [`fft_mode_error`] after checking that `grid` is evenly spaced.
pub fn fft_mode_error_on_grid(grid: &[f64], residual: &[f64], m: usize) -> Result<Vec<f64>> {
    if grid.len() != residual.len() {
        return Err(Error::config("grid and residual lengths differ"));
    }
    if grid.len() > 2 {
        let h = grid[1] - grid[0];
        let span = (grid[grid.len() - 1] - grid[0]).abs().max(f64::MIN_POSITIVE);
        let uneven = grid
            .windows(2)
            .any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * span);
        if uneven || h <= 0.0 {
            return Err(Error::config("mode errors need a uniform, increasing grid"));
        }
    }
    fft_mode_error(residual, m)
}

/// Shell-wise mode errors of a residual on a `side x side` uniform grid
/// (row-major, `x` fastest). Mode `i` collects the 2-D DFT coefficients
/// with `max(|kx|, |ky|) = i` (signed frequencies) and reports their
/// root-sum-square divided by `side^2`.
pub fn fft_mode_error_2d(residual: &[f64], side: usize, m: usize) -> Result<Vec<f64>> {
    if residual.len() != side * side {
        return Err(Error::config(format!(
            "residual has {} entries, expected {side}x{side}",
            residual.len()
        )));
    }
    if m > side / 2 {
        return Err(Error::config(format!("{m} modes requested from a {side}-point grid")));
    }
    if side == 0 {
        return Ok(Vec::new());
    }
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(side);
    let mut data: Vec<Complex64> = residual.iter().map(|&r| Complex64::new(r, 0.0)).collect();
    for row in data.chunks_mut(side) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); side];
    for c in 0..side {
        for r in 0..side {
            col[r] = data[r * side + c];
        }
        fft.process(&mut col);
        for r in 0..side {
            data[r * side + c] = col[r];
        }
    }
    let signed = |k: usize| if k <= side / 2 { k } else { side - k };
    let mut shells = vec![0.0f64; m];
    for ky in 0..side {
        for kx in 0..side {
            let shell = signed(kx).max(signed(ky));
            if shell < m {
                shells[shell] += data[ky * side + kx].norm_sqr();
            }
        }
    }
    let norm = (side * side) as f64;
    Ok(shells.into_iter().map(|s| s.sqrt() / norm).collect())
}
