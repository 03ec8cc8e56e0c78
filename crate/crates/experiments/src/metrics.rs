//! Metrics and timing CSV writers.
//!
//! `metrics.csv` holds only deterministic quantities so that two runs with
//! the same config and seed produce identical files; wall-clock time goes to
//! `timing.csv`.

use std::fs::File;
use std::path::Path;
use std::time::Instant;

use crate::error::{Result, RunError};

pub const METRICS_HEADER: [&str; 6] = ["series", "iteration", "epoch", "train_loss", "val_metric", "lr"];
pub const TIMING_HEADER: [&str; 3] = ["series", "iteration", "wall_seconds"];

/// Nine significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub series: String,
    pub iteration: u64,
    pub epoch: u64,
    pub train_loss: f64,
    pub val_metric: Option<f64>,
    pub lr: f64,
}

pub struct MetricsWriter {
    metrics: csv::Writer<File>,
    timing: csv::Writer<File>,
    start: Instant,
    last: Option<(String, u64)>,
}

impl MetricsWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        let mut metrics = csv::Writer::from_path(dir.join("metrics.csv"))?;
        let mut timing = csv::Writer::from_path(dir.join("timing.csv"))?;
        metrics.write_record(METRICS_HEADER)?;
        timing.write_record(TIMING_HEADER)?;
        Ok(MetricsWriter {
            metrics,
            timing,
            start: Instant::now(),
            last: None,
        })
    }

    /// Append a row; iterations must increase strictly within a series.
    pub fn push(&mut self, row: &MetricsRow) -> Result<()> {
        if let Some((s, it)) = &self.last {
            if *s == row.series && row.iteration <= *it {
                return Err(RunError::Other(format!(
                    "metrics for series {} went from iteration {it} to {}",
                    row.series, row.iteration
                )));
            }
        }
        self.last = Some((row.series.clone(), row.iteration));
        self.metrics.write_record([
            row.series.clone(),
            row.iteration.to_string(),
            row.epoch.to_string(),
            fmt_float(row.train_loss),
            fmt_opt(row.val_metric),
            fmt_float(row.lr),
        ])?;
        self.timing.write_record([
            row.series.clone(),
            row.iteration.to_string(),
            format!("{:.3}", self.start.elapsed().as_secs_f64()),
        ])?;
        self.metrics.flush().map_err(|e| RunError::io("flushing metrics.csv", e))?;
        self.timing.flush().map_err(|e| RunError::io("flushing timing.csv", e))?;
        Ok(())
    }
}

/// Write a CSV with a header and pre-formatted rows.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| RunError::io(format!("writing {}", path.display()), e))?;
    Ok(())
}
