use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{read_metrics, MetricsRecord, MetricsTable};
use crate::error::{Error, Result};

/// Pointwise order statistics of every metric column across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedAggregate {
    pub runs: usize,
    pub iterations: Vec<u64>,
    pub phases: Vec<usize>,
    /// Metric names, in CSV order, without `iteration` and `phase`.
    pub metrics: Vec<String>,
    /// `min[row][metric]`, `None` where no run has a finite value.
    pub min: Vec<Vec<Option<f64>>>,
    pub median: Vec<Vec<Option<f64>>>,
    pub max: Vec<Vec<Option<f64>>>,
}

fn median_of_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Aggregates tables that share a header and an iteration grid. `names`
/// label the tables in error messages.
pub fn aggregate_tables(names: &[String], tables: &[MetricsTable]) -> Result<SeedAggregate> {
    let first = tables
        .first()
        .ok_or_else(|| Error::Aggregation("no runs to aggregate".into()))?;
    let it_col = first
        .column_index("iteration")
        .ok_or_else(|| Error::Aggregation(format!("{} has no iteration column", names[0])))?;
    let ph_col = first.column_index("phase");
    let grid: Vec<Option<f64>> = first.rows.iter().map(|r| r[it_col]).collect();
    let mut offending = Vec::new();
    for (name, t) in names.iter().zip(tables).skip(1) {
        let same_grid = t.header == first.header
            && t.rows.len() == first.rows.len()
            && t.rows.iter().zip(&grid).all(|(r, g)| r[it_col] == *g);
        if !same_grid {
            offending.push(name.clone());
        }
    }
    if !offending.is_empty() {
        return Err(Error::Aggregation(format!(
            "runs do not share the columns and iteration grid of {}: {}",
            names[0],
            offending.join(", ")
        )));
    }
    let metric_cols: Vec<usize> = (0..first.header.len())
        .filter(|&c| c != it_col && Some(c) != ph_col)
        .collect();
    let rows = first.rows.len();
    let mut out = SeedAggregate {
        runs: tables.len(),
        iterations: grid.iter().map(|g| g.unwrap_or(0.0) as u64).collect(),
        phases: (0..rows)
            .map(|r| ph_col.and_then(|c| first.rows[r][c]).unwrap_or(0.0) as usize)
            .collect(),
        metrics: metric_cols.iter().map(|&c| first.header[c].clone()).collect(),
        min: Vec::with_capacity(rows),
        median: Vec::with_capacity(rows),
        max: Vec::with_capacity(rows),
    };
    for r in 0..rows {
        let (mut lo, mut mid, mut hi) = (Vec::new(), Vec::new(), Vec::new());
        for &c in &metric_cols {
            let mut vals: Vec<f64> = tables
                .iter()
                .filter_map(|t| t.rows[r][c])
                .filter(|v| v.is_finite())
                .collect();
            if vals.is_empty() {
                lo.push(None);
                mid.push(None);
                hi.push(None);
                continue;
            }
            vals.sort_by(f64::total_cmp);
            lo.push(Some(vals[0]));
            mid.push(Some(median_of_sorted(&vals)));
            hi.push(Some(vals[vals.len() - 1]));
        }
        out.min.push(lo);
        out.median.push(mid);
        out.max.push(hi);
    }
    Ok(out)
}

/// Reads `metrics.csv` from each run directory (or the CSV path itself)
/// and aggregates them.
pub fn aggregate_seeds(run_dirs: &[PathBuf]) -> Result<SeedAggregate> {
    let mut names = Vec::new();
    let mut tables = Vec::new();
    for d in run_dirs {
        let path = if d.is_dir() { d.join("metrics.csv") } else { d.clone() };
        names.push(path.display().to_string());
        tables.push(read_metrics(&path)?);
    }
    aggregate_tables(&names, &tables)
}

impl SeedAggregate {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["iteration".to_string(), "phase".to_string()];
        for m in &self.metrics {
            for stat in ["min", "median", "max"] {
                h.push(format!("{m}_{stat}"));
            }
        }
        h
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(file).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn write<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in 0..self.iterations.len() {
            let mut row = vec![self.iterations[r].to_string(), self.phases[r].to_string()];
            for m in 0..self.metrics.len() {
                row.push(cell(self.min[r][m]));
                row.push(cell(self.median[r][m]));
                row.push(cell(self.max[r][m]));
            }
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::io("<aggregate output>", e))?;
        Ok(())
    }
}

/// First iterations at which train and test accuracy reach their
/// thresholds, and the gap between them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delay {
    pub t_train: Option<u64>,
    pub t_test: Option<u64>,
    /// `t_test - t_train`; `None` unless both were reached.
    pub gap: Option<i64>,
}

pub const DEFAULT_TRAIN_THRESHOLD: f64 = 0.99;
pub const DEFAULT_TEST_THRESHOLD: f64 = 0.95;

pub fn delay_metric(records: &[MetricsRecord], train_threshold: f64, test_threshold: f64) -> Result<Delay> {
    for t in [train_threshold, test_threshold] {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Domain(format!("accuracy threshold {t} is outside (0, 1]")));
        }
    }
    let first = |get: fn(&MetricsRecord) -> Option<f64>, thr: f64| {
        records
            .iter()
            .find(|r| get(r).is_some_and(|a| a >= thr))
            .map(|r| r.iteration)
    };
    let t_train = first(|r| r.train_acc, train_threshold);
    let t_test = first(|r| r.test_acc, test_threshold);
    let gap = match (t_train, t_test) {
        (Some(a), Some(b)) => Some(b as i64 - a as i64),
        _ => None,
    };
    Ok(Delay { t_train, t_test, gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(vals: &[(u64, f64)]) -> MetricsTable {
        MetricsTable {
            header: vec!["iteration".into(), "phase".into(), "train_loss".into(), "test_acc".into()],
            rows: vals
                .iter()
                .map(|&(i, v)| vec![Some(i as f64), Some(0.0), Some(v), None])
                .collect(),
        }
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("run{i}")).collect()
    }

    #[test]
    fn single_run_is_its_own_band() {
        let t = table(&[(1, 0.5), (2, 0.25)]);
        let a = aggregate_tables(&names(1), std::slice::from_ref(&t)).unwrap();
        assert_eq!(a.min, a.max);
        assert_eq!(a.median[1][0], Some(0.25));
        assert_eq!(a.median[0][1], None);
    }

    #[test]
    fn order_statistics_of_three_constants() {
        let ts: Vec<_> = [1.0, 4.0, 2.0].iter().map(|&v| table(&[(10, v), (20, v)])).collect();
        let a = aggregate_tables(&names(3), &ts).unwrap();
        for r in 0..2 {
            assert_eq!((a.min[r][0], a.median[r][0], a.max[r][0]), (Some(1.0), Some(2.0), Some(4.0)));
        }
    }

    #[test]
    fn misaligned_grids_name_the_offender() {
        let ts = vec![table(&[(1, 0.0), (2, 0.0)]), table(&[(1, 0.0), (2, 0.0)]), table(&[(1, 0.0), (3, 0.0)])];
        let e = aggregate_tables(&names(3), &ts).unwrap_err();
        assert!(matches!(&e, Error::Aggregation(m) if m.contains("run2") && !m.contains("run1")));
    }

    proptest! {
        #[test]
        fn bands_are_ordered(vals in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 4), 1..7)) {
            let ts: Vec<_> = vals
                .iter()
                .map(|run| table(&run.iter().enumerate().map(|(i, v)| (i as u64, *v)).collect::<Vec<_>>()))
                .collect();
            let a = aggregate_tables(&names(ts.len()), &ts).unwrap();
            for r in 0..4 {
                let (lo, mid, hi) = (a.min[r][0].unwrap(), a.median[r][0].unwrap(), a.max[r][0].unwrap());
                prop_assert!(lo <= mid && mid <= hi);
            }
        }
    }

    fn acc(i: u64, train: f64, test: f64) -> MetricsRecord {
        MetricsRecord {
            iteration: i,
            train_acc: Some(train),
            test_acc: Some(test),
            ..Default::default()
        }
    }

    #[test]
    fn delay_definition() {
        let recs: Vec<_> = (1..=50)
            .map(|k| {
                let i = k * 100;
                acc(i, if i >= 100 { 1.0 } else { 0.5 }, if i >= 4000 { 0.96 } else { 0.2 })
            })
            .collect();
        let d = delay_metric(&recs, 0.99, 0.95).unwrap();
        assert_eq!((d.t_train, d.t_test, d.gap), (Some(100), Some(4000), Some(3900)));
        let never: Vec<_> = (1..5).map(|i| acc(i, 1.0, 0.1)).collect();
        let d = delay_metric(&never, 0.99, 0.95).unwrap();
        assert_eq!((d.t_train, d.t_test, d.gap), (Some(1), None, None));
        assert!(delay_metric(&never, 0.0, 0.5).is_err());
        assert!(delay_metric(&never, 0.5, 1.5).is_err());
    }
}
