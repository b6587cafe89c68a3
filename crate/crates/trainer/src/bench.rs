//! Standalone harmonizer descent on synthetic loss streams.

use hwm_core::harmonizer::{
    harmonized_scale, log_scale_gradient, stationary_sigma, stationary_weight, LOG_SCALE_MAX,
    LOG_SCALE_MIN,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainerError};

/// A sequence of per-step loss values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossStream {
    Constant {
        value: f64,
    },
    /// Lognormal with the given mean; `log_sd` is the standard deviation of
    /// the underlying normal.
    Lognormal {
        mean: f64,
        log_sd: f64,
    },
    /// `end + (start - end) · exp(-t / tau)`.
    Decaying {
        start: f64,
        end: f64,
        tau: f64,
    },
}

impl LossStream {
    /// Mean of the values the descent settles on: the stream mean, or the
    /// asymptote of a decaying stream.
    pub fn target_mean(&self) -> f64 {
        match *self {
            LossStream::Constant { value } => value,
            LossStream::Lognormal { mean, .. } => mean,
            LossStream::Decaying { end, .. } => end,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LossStream::Constant { value } => value > 0.0,
            LossStream::Lognormal { mean, log_sd } => mean > 0.0 && log_sd >= 0.0,
            LossStream::Decaying { start, end, tau } => start > 0.0 && end > 0.0 && tau > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(TrainerError::Config(format!(
                "invalid loss stream {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchStream {
    pub name: String,
    pub stream: LossStream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub streams: Vec<BenchStream>,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Loss values at which the weight-vs-scale curve is evaluated.
    pub curve: Vec<f64>,
}

impl Default for BenchSpec {
    fn default() -> Self {
        let mut streams: Vec<BenchStream> = [0.01, 0.5, 1.0, 4.0, 100.0]
            .into_iter()
            .map(|c| BenchStream {
                name: format!("constant_{c}"),
                stream: LossStream::Constant { value: c },
            })
            .collect();
        streams.push(BenchStream {
            name: "lognormal_4".into(),
            stream: LossStream::Lognormal {
                mean: 4.0,
                log_sd: 0.5,
            },
        });
        streams.push(BenchStream {
            name: "decaying_100_to_1".into(),
            stream: LossStream::Decaying {
                start: 100.0,
                end: 1.0,
                tau: 250.0,
            },
        });
        streams.push(BenchStream {
            name: "small_reward_1e-3".into(),
            stream: LossStream::Lognormal {
                mean: 1e-3,
                log_sd: 0.5,
            },
        });
        // Log-spaced from 1e-4 to 1e4, plus the spot values.
        let mut curve: Vec<f64> = (0..=32)
            .map(|i| 10f64.powf(-4.0 + i as f64 * 0.25))
            .collect();
        curve.extend([1e-3, 0.01, 1.0, 4.0]);
        curve.sort_by(f64::total_cmp);
        curve.dedup();
        Self {
            streams,
            steps: 5000,
            lr: 0.02,
            seed: 0,
            curve,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub name: String,
    pub rectified: bool,
    /// σ at the end of descent, averaged over the last half for noisy streams.
    pub converged_sigma: f64,
    /// Analytic stationary σ for the stream's target mean.
    pub stationary_sigma: f64,
    /// `|converged - stationary| / stationary`.
    pub relative_gap: f64,
    /// Effective weight `1/σ` at the end of descent.
    pub effective_weight: f64,
    /// First step after which σ stays within 1e-3 (relative) of the
    /// stationary value, if it does.
    pub steps_to_converge: Option<usize>,
    /// Final σ of every step, for plotting.
    pub sigma_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub loss: f64,
    pub weight: f64,
    pub weight_rectified: f64,
    pub scale: f64,
    pub scale_rectified: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub curve: Vec<CurvePoint>,
}

impl BenchReport {
    pub fn row(&self, name: &str, rectified: bool) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.name == name && r.rectified == rectified)
    }
}

/// Gradient descent on `s = log σ` from `s = 0`, one loss draw per step.
pub fn descend(
    stream: &LossStream,
    rectified: bool,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    stream.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lognormal = match *stream {
        LossStream::Lognormal { mean, log_sd } => Some(
            LogNormal::new(mean.ln() - 0.5 * log_sd * log_sd, log_sd)
                .map_err(|e| TrainerError::Config(e.to_string()))?,
        ),
        _ => None,
    };
    let mut s = 0.0f64;
    let mut trace = Vec::with_capacity(steps);
    for t in 0..steps {
        let loss = match *stream {
            LossStream::Constant { value } => value,
            LossStream::Lognormal { .. } => lognormal.as_ref().unwrap().sample(&mut rng),
            LossStream::Decaying { start, end, tau } => {
                end + (start - end) * (-(t as f64) / tau).exp()
            }
        };
        s = (s - lr * log_scale_gradient(loss, s, rectified)).clamp(LOG_SCALE_MIN, LOG_SCALE_MAX);
        trace.push(s.exp());
    }
    Ok(trace)
}

pub fn run(spec: &BenchSpec) -> Result<BenchReport> {
    if spec.steps == 0 || !(spec.lr > 0.0) {
        return Err(TrainerError::Config(
            "bench needs positive steps and learning rate".into(),
        ));
    }
    let mut rows = Vec::new();
    for (i, bs) in spec.streams.iter().enumerate() {
        for rectified in [false, true] {
            let trace = descend(
                &bs.stream,
                rectified,
                spec.steps,
                spec.lr,
                spec.seed.wrapping_add(i as u64),
            )?;
            let target = stationary_sigma(bs.stream.target_mean(), rectified)?;
            let converged = match bs.stream {
                LossStream::Lognormal { .. } => {
                    let tail = &trace[trace.len() / 2..];
                    tail.iter().sum::<f64>() / tail.len() as f64
                }
                _ => *trace.last().unwrap(),
            };
            let within = |v: &f64| ((v - target) / target).abs() < 1e-3;
            let steps_to_converge = match trace.iter().rposition(|v| !within(v)) {
                None => Some(0),
                Some(last_out) if last_out + 1 < trace.len() => Some(last_out + 1),
                Some(_) => None,
            };
            rows.push(BenchRow {
                name: bs.name.clone(),
                rectified,
                converged_sigma: converged,
                stationary_sigma: target,
                relative_gap: ((converged - target) / target).abs(),
                effective_weight: 1.0 / converged,
                steps_to_converge,
                sigma_trace: trace,
            });
        }
    }
    let curve = spec
        .curve
        .iter()
        .map(|&l| {
            Ok(CurvePoint {
                loss: l,
                weight: stationary_weight(l, false)?,
                weight_rectified: stationary_weight(l, true)?,
                scale: harmonized_scale(l, false)?,
                scale_rectified: harmonized_scale(l, true)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport { rows, curve })
}

pub fn write_curve(curve: &[CurvePoint], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| TrainerError::Metrics(e.to_string()))?;
    for p in curve {
        w.serialize(p)
            .map_err(|e| TrainerError::Metrics(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
