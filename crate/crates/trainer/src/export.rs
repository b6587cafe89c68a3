//! Aggregates metrics from several run directories into per-bucket means
//! with Student-t confidence intervals.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::ExperimentConfig;
use crate::error::{Result, TrainerError};
use crate::metrics::{read_metrics, MetricsRecord};
use crate::train::{CONFIG_FILE, METRICS_FILE};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExportRow {
    /// Upper edge of the env-step bucket.
    pub bucket: u64,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Mean and two-sided confidence interval at `level`. A single sample
/// collapses the interval to the mean.
pub fn mean_interval(values: &[f64], level: f64) -> Result<(f64, f64, f64)> {
    let n = values.len();
    if n == 0 {
        return Err(TrainerError::Config("no values to aggregate".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok((mean, mean, mean));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| TrainerError::Config(e.to_string()))?
        .inverse_cdf(0.5 + level / 2.0);
    let half = t * (var / n as f64).sqrt();
    Ok((mean, mean - half, mean + half))
}

pub struct Run {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub records: Vec<MetricsRecord>,
}

pub fn load_run(dir: &Path) -> Result<Run> {
    Ok(Run {
        dir: dir.to_path_buf(),
        config: ExperimentConfig::load(&dir.join(CONFIG_FILE))?,
        records: read_metrics(&dir.join(METRICS_FILE))?,
    })
}

/// Fails unless all runs share one configuration up to the seed.
pub fn check_compatible(runs: &[Run]) -> Result<()> {
    let key = |c: &ExperimentConfig| {
        ExperimentConfig {
            seed: 0,
            ..c.clone()
        }
        .render()
    };
    if let Some(first) = runs.first() {
        let k0 = key(&first.config);
        for r in &runs[1..] {
            if key(&r.config) != k0 {
                return Err(TrainerError::Config(format!(
                    "{} and {} were run with different configurations",
                    first.dir.display(),
                    r.dir.display()
                )));
            }
        }
    }
    Ok(())
}

/// Per-run bucket means, then across-run mean and interval. Records fall in
/// the bucket whose upper edge is `env_steps` rounded up to `bucket`.
pub fn aggregate(runs: &[Run], bucket: u64, level: f64) -> Result<Vec<ExportRow>> {
    if bucket == 0 {
        return Err(TrainerError::Config("bucket size must be positive".into()));
    }
    // (bucket, metric) -> one mean per run
    let mut cells: BTreeMap<(u64, &'static str), Vec<f64>> = BTreeMap::new();
    for run in runs {
        let mut sums: BTreeMap<(u64, &'static str), (f64, usize)> = BTreeMap::new();
        for rec in &run.records {
            let b = rec.env_steps.div_ceil(bucket) * bucket;
            for (name, v) in rec.fields() {
                if let Some(v) = v {
                    let e = sums.entry((b, name)).or_default();
                    e.0 += v;
                    e.1 += 1;
                }
            }
        }
        for (k, (s, c)) in sums {
            cells.entry(k).or_default().push(s / c as f64);
        }
    }
    let order: Vec<&str> = MetricsRecord::field_names();
    let mut rows = Vec::with_capacity(cells.len());
    for ((b, metric), vals) in &cells {
        let (mean, lo, hi) = mean_interval(vals, level)?;
        rows.push(ExportRow {
            bucket: *b,
            metric: metric.to_string(),
            n: vals.len(),
            mean,
            ci_low: lo,
            ci_high: hi,
        });
    }
    rows.sort_by_key(|r| (r.bucket, order.iter().position(|m| *m == r.metric)));
    Ok(rows)
}

pub fn write_csv(rows: &[ExportRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| TrainerError::Metrics(e.to_string()))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| TrainerError::Metrics(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Loads `dirs`, checks they agree (unless `force`) and writes the CSV.
pub fn export(dirs: &[PathBuf], bucket: u64, force: bool, out: &Path) -> Result<Vec<ExportRow>> {
    if dirs.is_empty() {
        return Err(TrainerError::Config(
            "export needs at least one run directory".into(),
        ));
    }
    let runs = dirs
        .iter()
        .map(|d| load_run(d))
        .collect::<Result<Vec<_>>>()?;
    if !force {
        check_compatible(&runs)?;
    }
    let rows = aggregate(&runs, bucket, 0.95)?;
    write_csv(&rows, out)?;
    Ok(rows)
}
