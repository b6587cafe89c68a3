//! State-regression probe: how much ground-truth state a representation
//! carries, measured as the validation error of an MLP regressor.

use hwm_core::behavior::standard_normal;
use hwm_core::nn::{Activation, Mlp};
use hwm_core::{Adam, AdamConfig, Binding, ParamStoreF64, Tape, Tensor, TensorF64, WorldModelF64};
use hwm_envs::buffer::{TrajectorySegment, STATE_DIM};
use hwm_envs::ReplayBuffer;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::segments_to_batch;
use crate::config::ExperimentConfig;
use crate::error::{Result, TrainerError};

/// Representation/state pairs split 90/10 by group, so correlated rows of
/// one trajectory segment never straddle the split.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub train_x: TensorF64,
    pub train_y: TensorF64,
    pub val_x: TensorF64,
    pub val_y: TensorF64,
}

impl ProbeDataset {
    /// `groups[i]` names the group of row `i`.
    pub fn split(x: &TensorF64, y: &TensorF64, groups: &[usize], seed: u64) -> Result<Self> {
        let n = x.shape()[0];
        if y.shape()[0] != n || groups.len() != n {
            return Err(TrainerError::Config(format!(
                "probe data rows disagree: {n} inputs, {} targets, {} group labels",
                y.shape()[0],
                groups.len()
            )));
        }
        let mut ids: Vec<usize> = groups.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() < 2 {
            return Err(TrainerError::Config(
                "probe data needs at least two groups".into(),
            ));
        }
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = (ids.len() / 10).max(1);
        let val: std::collections::HashSet<usize> = ids[..n_val].iter().copied().collect();
        let (mut tr, mut va) = (Vec::new(), Vec::new());
        for (i, g) in groups.iter().enumerate() {
            if val.contains(g) {
                va.push(i);
            } else {
                tr.push(i);
            }
        }
        Ok(Self {
            train_x: x.select_rows(&tr),
            train_y: y.select_rows(&tr),
            val_x: x.select_rows(&va),
            val_y: y.select_rows(&va),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub layers: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl ProbeConfig {
    pub fn from_experiment(cfg: &ExperimentConfig) -> Self {
        Self {
            hidden: cfg.probe_hidden,
            layers: cfg.probe_layers,
            steps: cfg.probe_steps,
            batch: cfg.probe_batch,
            lr: cfg.probe_lr,
            seed: cfg.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub train_mse: f64,
    pub val_mse: f64,
    /// Mean per-dimension variance of the validation targets: the error of
    /// always predicting their mean.
    pub target_variance: f64,
}

/// Column means and standard deviations (floored to avoid division by zero).
fn standardizer(x: &TensorF64) -> (Vec<f64>, Vec<f64>) {
    let (n, c) = x.dims2().unwrap();
    let mut mean = vec![0.0; c];
    let mut sd = vec![0.0; c];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v / n as f64;
        }
    }
    for i in 0..n {
        for ((s, v), m) in sd.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m).powi(2) / n as f64;
        }
    }
    (mean, sd.into_iter().map(|v| v.sqrt().max(1e-6)).collect())
}

fn apply(x: &TensorF64, mean: &[f64], sd: &[f64]) -> TensorF64 {
    let c = mean.len();
    Tensor::from_fn(x.shape(), |i| (x.data()[i] - mean[i % c]) / sd[i % c])
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / target.len().max(1) as f64
}

/// Trains the probe on the training split and reports mean squared error
/// per target dimension, in the targets' original units.
pub fn train_probe(data: &ProbeDataset, cfg: &ProbeConfig) -> Result<ProbeReport> {
    if cfg.layers == 0 || cfg.batch == 0 {
        return Err(TrainerError::Config(
            "probe needs at least one layer and a positive batch".into(),
        ));
    }
    let (n, d_in) = data
        .train_x
        .dims2()
        .ok_or_else(|| TrainerError::Config("probe inputs must be rank 2".into()))?;
    let d_out = data.train_y.shape()[1];
    if data.val_x.shape()[1] != d_in || data.val_y.shape()[1] != d_out {
        return Err(TrainerError::Config(
            "probe train and validation dimensions differ".into(),
        ));
    }
    if n == 0 || data.val_x.shape()[0] == 0 {
        return Err(TrainerError::Config(
            "probe splits must be non-empty".into(),
        ));
    }
    let (xm, xs) = standardizer(&data.train_x);
    let (ym, ys) = standardizer(&data.train_y);
    let tx = apply(&data.train_x, &xm, &xs);
    let ty = apply(&data.train_y, &ym, &ys);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamStoreF64::new();
    let mut sizes = vec![d_in];
    sizes.extend(std::iter::repeat_n(cfg.hidden, cfg.layers - 1));
    sizes.push(d_out);
    let net = Mlp::new(&mut params, "probe", &sizes, Activation::Relu, &mut rng);
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr));
    for _ in 0..cfg.steps {
        let rows: Vec<usize> = (0..cfg.batch.min(n))
            .map(|_| rng.random_range(0..n))
            .collect();
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, Binding::Tracked);
        let x = tape.constant(tx.select_rows(&rows));
        let y = tape.constant(ty.select_rows(&rows));
        let pred = net.forward(&mut tape, &p, x)?;
        let diff = tape.sub(pred, y)?;
        let sq = tape.square(diff)?;
        let loss = tape.mean(sq)?;
        if !tape.item(loss).is_finite() {
            return Err(TrainerError::Numeric("probe loss became non-finite".into()));
        }
        let g = tape.backward(loss)?;
        opt.step(params.values_mut().iter_mut(), &p.grads(&g));
    }

    let predict = |x: &TensorF64| -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, Binding::Frozen);
        let xv = tape.constant(apply(x, &xm, &xs));
        let out = net.forward(&mut tape, &p, xv)?;
        Ok(tape
            .value(out)
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * ys[i % d_out] + ym[i % d_out])
            .collect())
    };
    let (_, vs) = standardizer(&data.val_y);
    Ok(ProbeReport {
        train_mse: mse(&predict(&data.train_x)?, data.train_y.data()),
        val_mse: mse(&predict(&data.val_x)?, data.val_y.data()),
        target_variance: vs.iter().map(|s| s * s).sum::<f64>() / d_out as f64,
    })
}

/// Posterior-mean features `[h, z]` and ground-truth states for every step
/// of `segments`, grouped by segment.
pub fn encode_segments(
    wm: &WorldModelF64,
    segments: &[TrajectorySegment],
    obs_len: usize,
) -> Result<(TensorF64, TensorF64, Vec<usize>)> {
    let batch = segments_to_batch(segments, obs_len);
    let n = batch.steps * batch.batch;
    let mut tape = Tape::new();
    let p = wm.params.bind(&mut tape, Binding::Frozen);
    let noise = Tensor::zeros(&[n, wm.config.stoch]);
    let out = wm.sequence_losses(&mut tape, &p, &batch, &noise, &Default::default())?;
    let features = out.stacked.values(&tape).features();
    let mut states = Vec::with_capacity(n * STATE_DIM);
    let mut groups = Vec::with_capacity(n);
    for t in 0..batch.steps {
        for (b, seg) in segments.iter().enumerate() {
            states.extend_from_slice(&seg.states[t * STATE_DIM..(t + 1) * STATE_DIM]);
            groups.push(b);
        }
    }
    Ok((
        features,
        Tensor::new(vec![n, STATE_DIM], states).unwrap(),
        groups,
    ))
}

/// Probe segments drawn from the buffer, identical for every checkpoint
/// under one configuration.
pub fn probe_segments(
    buffer: &ReplayBuffer,
    cfg: &ExperimentConfig,
) -> Result<Vec<TrajectorySegment>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    Ok(buffer.sample_segments(cfg.probe_segments, cfg.seq_len, &mut rng)?)
}

/// Pure-noise representation with the given shape, for calibration.
pub fn noise_features(rows: usize, dims: usize, seed: u64) -> TensorF64 {
    standard_normal(&mut ChaCha8Rng::seed_from_u64(seed), &[rows, dims])
}

/// Validation error of a world model's representation on the buffer.
pub fn probe_world_model(
    wm: &WorldModelF64,
    buffer: &ReplayBuffer,
    cfg: &ExperimentConfig,
) -> Result<ProbeReport> {
    let expected = cfg.world_model();
    if wm.config.feature_dim() != expected.feature_dim() {
        return Err(TrainerError::Config(format!(
            "checkpoint latent size {} differs from the configured {}",
            wm.config.feature_dim(),
            expected.feature_dim()
        )));
    }
    let segments = probe_segments(buffer, cfg)?;
    let (x, y, groups) = encode_segments(wm, &segments, buffer.obs_len())?;
    let data = ProbeDataset::split(&x, &y, &groups, cfg.seed)?;
    train_probe(&data, &ProbeConfig::from_experiment(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let x = Tensor::from_fn(&[60, 1], |i| i as f64);
        let y = x.clone();
        let groups: Vec<usize> = (0..60).map(|i| i / 3).collect();
        let a = ProbeDataset::split(&x, &y, &groups, 4).unwrap();
        let b = ProbeDataset::split(&x, &y, &groups, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.val_x.shape()[0], 6);
        assert_eq!(a.train_x.shape()[0], 54);
        let val_groups: Vec<usize> = a.val_x.data().iter().map(|&v| v as usize / 3).collect();
        for v in a.train_x.data() {
            assert!(!val_groups.contains(&(*v as usize / 3)));
        }
        assert_ne!(
            ProbeDataset::split(&x, &y, &groups, 5).unwrap().val_x,
            a.val_x
        );
    }
}
