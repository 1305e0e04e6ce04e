//! The `export` command: summary tables and error histograms of a run.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;

use crate::eval::Summary;
use crate::train::METRICS_FILE;
use crate::UsageError;

pub const EXPORT_DIR: &str = "export";
pub const EVAL_DIR: &str = "eval";
pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnSummary {
    pub metric: String,
    pub last: f64,
    /// Mean over the final tenth of the rows.
    pub tail_mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorDistribution {
    pub episodes: usize,
    pub position_m: Summary,
    pub orientation_rad: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExportSummary {
    pub iterations: usize,
    pub metrics: Vec<ColumnSummary>,
    pub evaluation: Option<ErrorDistribution>,
}

fn read_columns(path: &Path) -> anyhow::Result<(Vec<String>, Vec<Vec<f64>>)> {
    if !path.exists() {
        bail!(UsageError(format!("missing {}", path.display())));
    }
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut columns = vec![Vec::new(); header.len()];
    for (line, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{} row {}", path.display(), line + 1))?;
        for (col, field) in columns.iter_mut().zip(record.iter()) {
            let value = field
                .parse::<f64>()
                .with_context(|| format!("{} row {}: `{field}` is not a number", path.display(), line + 1))?;
            col.push(value);
        }
    }
    if columns.first().is_none_or(|c| c.is_empty()) {
        bail!(UsageError(format!("{} has no data rows", path.display())));
    }
    Ok((header, columns))
}

pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let max = values.iter().copied().fold(0.0, f64::max);
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 / bins as f64 };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let i = ((v / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lower: i as f64 * width,
            upper: (i + 1) as f64 * width,
            count,
        })
        .collect()
}

fn write_histogram(path: &Path, bins: &[HistogramBin]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lower", "upper", "count"])?;
    for b in bins {
        w.write_record([b.lower.to_string(), b.upper.to_string(), b.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the export files for `run_dir` and returns their directory.
pub fn export_run(run_dir: &Path, format: ExportFormat) -> anyhow::Result<PathBuf> {
    let (header, columns) = read_columns(&run_dir.join(METRICS_FILE))?;
    let rows = columns[0].len();
    let tail = (rows / 10).max(1);
    let metrics: Vec<ColumnSummary> = header
        .iter()
        .zip(&columns)
        .filter(|(name, _)| name.as_str() != "iteration")
        .map(|(name, col)| ColumnSummary {
            metric: name.clone(),
            last: col[rows - 1],
            tail_mean: col[rows - tail..].iter().sum::<f64>() / tail as f64,
            min: col.iter().copied().fold(f64::INFINITY, f64::min),
            max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();

    let out = run_dir.join(EXPORT_DIR);
    std::fs::create_dir_all(&out)?;
    let episodes_file = run_dir.join(EVAL_DIR).join("eval_episodes.csv");
    let evaluation = if episodes_file.exists() {
        let (header, columns) = read_columns(&episodes_file)?;
        let col = |name: &str| -> anyhow::Result<&Vec<f64>> {
            let i = header
                .iter()
                .position(|h| h == name)
                .with_context(|| format!("{} lacks column {name}", episodes_file.display()))?;
            Ok(&columns[i])
        };
        let pos = col("position_error_m")?;
        let rot = col("orientation_error_rad")?;
        write_histogram(&out.join("position_error_hist.csv"), &histogram(pos, HISTOGRAM_BINS))?;
        write_histogram(&out.join("orientation_error_hist.csv"), &histogram(rot, HISTOGRAM_BINS))?;
        Some(ErrorDistribution {
            episodes: pos.len(),
            position_m: Summary::of(pos),
            orientation_rad: Summary::of(rot),
        })
    } else {
        None
    };

    let summary = ExportSummary {
        iterations: rows,
        metrics,
        evaluation,
    };
    match format {
        ExportFormat::Json => {
            std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        }
        ExportFormat::Csv => {
            let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
            w.write_record(["metric", "last", "tail_mean", "min", "max"])?;
            for m in &summary.metrics {
                w.write_record([
                    m.metric.clone(),
                    m.last.to_string(),
                    m.tail_mean.to_string(),
                    m.min.to_string(),
                    m.max.to_string(),
                ])?;
            }
            if let Some(e) = &summary.evaluation {
                for (name, s) in [("eval_position_m", &e.position_m), ("eval_orientation_rad", &e.orientation_rad)] {
                    for (stat, v) in [("mean", s.mean), ("median", s.median), ("p95", s.p95)] {
                        w.write_record([format!("{name}_{stat}"), v.to_string(), String::new(), String::new(), String::new()])?;
                    }
                }
            }
            w.flush()?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_every_value() {
        let values = [0.0, 0.1, 0.5, 1.0, 0.99];
        let h = histogram(&values, 4);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), values.len());
        assert_eq!(h[3].count, 2);
        assert_eq!(h[3].upper, 1.0);
        assert_eq!(histogram(&[0.0, 0.0], 2)[0].count, 2);
    }
}
