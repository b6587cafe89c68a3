#![allow(dead_code)]

use hwm_trainer::ExperimentConfig;

/// A small configuration that trains in well under a second per hundred
/// environment steps.
pub fn tiny() -> ExperimentConfig {
    ExperimentConfig::parse_str(
        "model.deter = 8
         model.stoch = 4
         model.hidden = 16
         behavior.hidden = 16
         horizon = 5
         imag_starts = 8
         seq_len = 8
         batch_size = 4
         env.max_steps = 30
         total_steps = 200
         prefill = 50
         train_every = 5
         eval_every = 100
         eval_episodes = 2
         probe.hidden = 32
         probe.layers = 2
         probe.steps = 200
         probe.segments = 40",
    )
    .unwrap()
}

pub fn with(cfg: &ExperimentConfig, pairs: &[(&str, &str)]) -> ExperimentConfig {
    let mut c = cfg.clone();
    for (k, v) in pairs {
        c.set(k, v).unwrap();
    }
    c.validate().unwrap();
    c
}
