use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::registry::Recipe;
use crate::error::{Error, Result};

/// Bumped whenever the CSV columns or manifest fields change meaning.
pub const SCHEMA_VERSION: u32 = 1;

pub const LIBRARY_VERSION: &str = env!("CARGO_PKG_VERSION");

/// One logged row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub phase: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub weight_norm: f64,
    pub mode_errors: Vec<f64>,
    pub lambda_max: Option<f64>,
    pub lambda_min: Option<f64>,
    pub kappa_gd: Option<f64>,
    pub kappa_lm: Option<f64>,
    pub wall_ms: Option<f64>,
}

/// `iteration,phase,...,e_0..e_{m-1},...,wall_ms`
pub fn csv_header(modes: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "iteration",
        "phase",
        "train_loss",
        "test_loss",
        "train_acc",
        "test_acc",
        "weight_norm",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..modes).map(|i| format!("e_{i}")));
    h.extend(
        ["lambda_max", "lambda_min", "kappa_gd", "kappa_lm", "wall_ms"]
            .iter()
            .map(|s| s.to_string()),
    );
    h
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRecord {
    fn fields(&self, modes: usize) -> Vec<String> {
        let mut f = vec![
            self.iteration.to_string(),
            self.phase.to_string(),
            self.train_loss.to_string(),
            opt(self.test_loss),
            opt(self.train_acc),
            opt(self.test_acc),
            self.weight_norm.to_string(),
        ];
        f.extend((0..modes).map(|i| opt(self.mode_errors.get(i).copied())));
        f.extend([
            opt(self.lambda_max),
            opt(self.lambda_min),
            opt(self.kappa_gd),
            opt(self.kappa_lm),
            opt(self.wall_ms),
        ]);
        f
    }
}

pub fn write_metrics(path: &Path, records: &[MetricsRecord], modes: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(csv_header(modes))?;
    for r in records {
        w.write_record(r.fields(modes))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// A metrics CSV read back as numbers, with empty fields as `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl MetricsTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Number of `e_i` columns.
    pub fn mode_count(&self) -> usize {
        self.header.iter().filter(|h| h.starts_with("e_")).count()
    }

    /// Typed view of the rows.
    pub fn records(&self) -> Result<Vec<MetricsRecord>> {
        let idx = |n: &str| {
            self.column_index(n)
                .ok_or_else(|| Error::config(format!("metrics table has no '{n}' column")))
        };
        let (it, ph, trl, tel, tra, tea, wn) = (
            idx("iteration")?,
            idx("phase")?,
            idx("train_loss")?,
            idx("test_loss")?,
            idx("train_acc")?,
            idx("test_acc")?,
            idx("weight_norm")?,
        );
        let modes: Vec<usize> = (0..self.mode_count())
            .map(|i| idx(&format!("e_{i}")))
            .collect::<Result<_>>()?;
        let (lmax, lmin, kg, kl, wall) = (
            idx("lambda_max")?,
            idx("lambda_min")?,
            idx("kappa_gd")?,
            idx("kappa_lm")?,
            idx("wall_ms")?,
        );
        Ok(self
            .rows
            .iter()
            .map(|r| MetricsRecord {
                iteration: r[it].unwrap_or(0.0) as u64,
                phase: r[ph].unwrap_or(0.0) as usize,
                train_loss: r[trl].unwrap_or(f64::NAN),
                test_loss: r[tel],
                train_acc: r[tra],
                test_acc: r[tea],
                weight_norm: r[wn].unwrap_or(f64::NAN),
                mode_errors: modes.iter().map(|&i| r[i].unwrap_or(f64::NAN)).collect(),
                lambda_max: r[lmax],
                lambda_min: r[lmin],
                kappa_gd: r[kg],
                kappa_lm: r[kl],
                wall_ms: r[wall],
            })
            .collect())
    }
}

pub fn read_metrics(path: &Path) -> Result<MetricsTable> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse::<f64>().map(Some).map_err(|_| {
                        Error::config(format!(
                            "{}: row {} has non-numeric field '{f}'",
                            path.display(),
                            line + 2
                        ))
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(MetricsTable { header, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed { iteration: u64, message: String },
}

/// Everything needed to reproduce one seed's metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub library_version: String,
    pub registry_id: Option<String>,
    pub seed: u64,
    /// `key=value` overrides exactly as given.
    pub overrides: Vec<String>,
    pub recipe: Option<Recipe>,
    pub config: ExperimentConfig,
    /// Iterations after which a new phase starts.
    pub phase_boundaries: Vec<u64>,
    pub rows: usize,
    pub status: RunStatus,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let h = csv_header(3).join(",");
        assert_eq!(
            h,
            "iteration,phase,train_loss,test_loss,train_acc,test_acc,weight_norm,e_0,e_1,e_2,\
             lambda_max,lambda_min,kappa_gd,kappa_lm,wall_ms"
        );
        assert_eq!(csv_header(0).len(), 12);
    }

    #[test]
    fn round_trip_with_missing_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let recs = vec![
            MetricsRecord {
                iteration: 5,
                phase: 1,
                train_loss: 0.125,
                test_acc: Some(0.5),
                weight_norm: 3.0,
                mode_errors: vec![1e-3, 2.5e-7],
                kappa_gd: Some(400.0),
                ..Default::default()
            },
            MetricsRecord {
                iteration: 10,
                train_loss: f64::NAN,
                weight_norm: 1.0 / 3.0,
                mode_errors: vec![0.1, 0.2],
                ..Default::default()
            },
        ];
        write_metrics(&path, &recs, 2).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("5,1,0.125,,,0.5,3,0.001,0.00000025,,,400,,"));
        let back = read_metrics(&path).unwrap().records().unwrap();
        assert_eq!(back[0], recs[0]);
        assert!(back[1].train_loss.is_nan());
        assert_eq!(back[1].weight_norm, 1.0 / 3.0);
    }
}
