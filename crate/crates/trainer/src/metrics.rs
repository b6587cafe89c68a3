//! JSON-lines metrics: one record per world-model update, keys in a fixed
//! order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainerError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub update: u64,
    pub env_steps: u64,
    pub loss_o: f64,
    pub loss_r: f64,
    pub loss_d: f64,
    pub sigma_o: f64,
    pub sigma_r: f64,
    pub sigma_d: f64,
    pub weight_o: f64,
    pub weight_r: f64,
    pub weight_d: f64,
    pub actor_entropy: Option<f64>,
    pub critic_loss: Option<f64>,
    pub lambda_target_mean: Option<f64>,
    /// Mean evaluation return, on records that follow an evaluation.
    pub eval_return: Option<f64>,
    pub wall_clock_s: f64,
}

impl MetricsRecord {
    pub fn losses(&self) -> [f64; 3] {
        [self.loss_o, self.loss_r, self.loss_d]
    }

    pub fn sigmas(&self) -> [f64; 3] {
        [self.sigma_o, self.sigma_r, self.sigma_d]
    }

    pub fn weights(&self) -> [f64; 3] {
        [self.weight_o, self.weight_r, self.weight_d]
    }

    /// The record without its wall-clock field, which is the only value that
    /// differs between two runs of the same configuration.
    pub fn without_clock(&self) -> Self {
        Self {
            wall_clock_s: 0.0,
            ..self.clone()
        }
    }

    /// Names returned by [`Self::fields`], in order.
    pub fn field_names() -> Vec<&'static str> {
        vec![
            "loss_o",
            "loss_r",
            "loss_d",
            "sigma_o",
            "sigma_r",
            "sigma_d",
            "weight_o",
            "weight_r",
            "weight_d",
            "actor_entropy",
            "critic_loss",
            "lambda_target_mean",
            "eval_return",
        ]
    }

    /// Named numeric fields for export; `None` where the value is absent.
    pub fn fields(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("loss_o", Some(self.loss_o)),
            ("loss_r", Some(self.loss_r)),
            ("loss_d", Some(self.loss_d)),
            ("sigma_o", Some(self.sigma_o)),
            ("sigma_r", Some(self.sigma_r)),
            ("sigma_d", Some(self.sigma_d)),
            ("weight_o", Some(self.weight_o)),
            ("weight_r", Some(self.weight_r)),
            ("weight_d", Some(self.weight_d)),
            ("actor_entropy", self.actor_entropy),
            ("critic_loss", self.critic_loss),
            ("lambda_target_mean", self.lambda_target_mean),
            ("eval_return", self.eval_return),
        ]
    }
}

/// Append-only writer flushed after every record.
pub struct MetricsWriter {
    out: BufWriter<File>,
    count: u64,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
            count: 0,
        })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        if record.update != self.count {
            return Err(TrainerError::Metrics(format!(
                "record {} written out of order (expected update {})",
                record.update, self.count
            )));
        }
        serde_json::to_writer(&mut self.out, record)
            .map_err(|e| TrainerError::Metrics(e.to_string()))?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetricsRecord = serde_json::from_str(&line).map_err(|e| {
            TrainerError::Metrics(format!("{} line {}: {e}", path.display(), n + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}
