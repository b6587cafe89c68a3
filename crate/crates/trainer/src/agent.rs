//! World model, harmonizer and actor-critic bundled with their optimizers.

use std::path::Path;

use hwm_core::behavior::{standard_normal, BehaviorReport};
use hwm_core::checkpoint;
use hwm_core::harmonizer::{combine, CombineAux, DwaTracker, Task, WeightingScheme};
use hwm_core::world_model::{KlConfig, SequenceBatch, WorldModelState};
use hwm_core::{
    ActorCriticF64, Adam, AdamConfig, Binding, LogScalesF64, Tape, Tensor, TensorF64, WorldModelF64,
};
use hwm_envs::buffer::{TrajectorySegment, NO_ACTION};
use hwm_envs::grid::{to_unit_range, ACTIONS};
use rand::Rng;

use crate::config::ExperimentConfig;
use crate::error::{Result, TrainerError};

/// Scalars from one world-model update, taken before the parameter step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldModelReport {
    pub losses: [f64; 3],
    pub sigmas: [f64; 3],
    pub weights: [f64; 3],
}

/// Loss values and parameter gradients of the combined objective.
#[derive(Debug, Clone)]
pub struct WorldModelGradients {
    pub report: WorldModelReport,
    pub total: f64,
    /// World-model parameter gradients, in store order.
    pub model: Vec<TensorF64>,
    /// Log-scale gradients when the scheme learns them.
    pub scales: Option<Vec<TensorF64>>,
    /// Posterior states of every batch row, time-major.
    pub posterior: WorldModelState<f64>,
}

pub struct Agent {
    pub wm: WorldModelF64,
    pub scales: LogScalesF64,
    pub ac: ActorCriticF64,
    wm_opt: Adam<f64>,
    dwa: DwaTracker,
    scheme: WeightingScheme,
    kl: KlConfig,
    imag_starts: usize,
}

impl Agent {
    /// Initializes every network from `rng`; the draw order does not depend
    /// on the weighting scheme.
    pub fn new(cfg: &ExperimentConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let wm_cfg = cfg.world_model();
        let wm = WorldModelF64::new(wm_cfg, rng);
        let ac = ActorCriticF64::new(wm_cfg.feature_dim(), cfg.behavior(), rng);
        Ok(Self {
            wm,
            scales: LogScalesF64::new(),
            ac,
            wm_opt: Adam::new(AdamConfig::with_lr(cfg.wm_lr)),
            dwa: DwaTracker::new(cfg.dwa_window),
            scheme: cfg.scheme(),
            kl: cfg.kl(),
            imag_starts: cfg.imag_starts,
        })
    }

    pub fn scheme(&self) -> &WeightingScheme {
        &self.scheme
    }

    /// Combined objective and its gradients for one batch and noise draw.
    pub fn gradients(
        &self,
        batch: &SequenceBatch<f64>,
        noise: &TensorF64,
    ) -> Result<WorldModelGradients> {
        let mut tape = Tape::new();
        let p = self.wm.params.bind(&mut tape, Binding::Tracked);
        let learn_scales = self.scheme.uses_log_scales();
        let sp = self.scales.params.bind(
            &mut tape,
            if learn_scales {
                Binding::Tracked
            } else {
                Binding::Frozen
            },
        );
        let out = self
            .wm
            .sequence_losses(&mut tape, &p, batch, noise, &self.kl)?;
        let losses = out.losses.values(&tape);
        let aux = CombineAux {
            obs_dims: self.wm.config.obs_dim,
            dwa_weights: self.dwa.weights(dwa_temperature(&self.scheme))?,
        };
        let scale_vars = learn_scales.then(|| self.scales.vars(&sp));
        let combined = combine(&mut tape, &out.losses, &self.scheme, scale_vars, &aux)?;
        let total = tape.item(combined.total);
        if !total.is_finite() {
            return Err(TrainerError::Numeric(format!(
                "total world-model loss is {total:e}"
            )));
        }
        let grads = tape.backward(combined.total)?;
        let sigmas = if learn_scales {
            self.scales.sigmas()
        } else {
            [1.0; 3]
        };
        Ok(WorldModelGradients {
            report: WorldModelReport {
                losses,
                sigmas,
                weights: combined.weights,
            },
            total,
            model: p.grads(&grads),
            scales: learn_scales.then(|| sp.grads(&grads)),
            posterior: out.stacked.values(&tape),
        })
    }

    /// One joint step of the world model and (when learned) the log-scales.
    pub fn world_model_step(
        &mut self,
        batch: &SequenceBatch<f64>,
        rng: &mut impl Rng,
    ) -> Result<(WorldModelReport, WorldModelState<f64>)> {
        let noise = standard_normal(rng, &[batch.steps * batch.batch, self.wm.config.stoch]);
        let g = self.gradients(batch, &noise)?;
        let mut grads = g.model;
        match g.scales {
            Some(sg) => {
                grads.extend(sg);
                let params = self
                    .wm
                    .params
                    .values_mut()
                    .iter_mut()
                    .chain(self.scales.params.values_mut().iter_mut());
                self.wm_opt.step(params, &grads);
                self.scales.clamp();
            }
            None => {
                self.wm_opt
                    .step(self.wm.params.values_mut().iter_mut(), &grads);
            }
        }
        if !self.wm.params.all_finite() {
            return Err(TrainerError::Numeric(
                "world-model parameters became non-finite".into(),
            ));
        }
        self.dwa.record(g.report.losses);
        Ok((g.report, g.posterior))
    }

    /// Actor-critic step on rollouts imagined from a random subset of
    /// `posterior` rows.
    pub fn behavior_step(
        &mut self,
        posterior: &WorldModelState<f64>,
        rng: &mut impl Rng,
    ) -> Result<BehaviorReport> {
        let rows = posterior.batch();
        let start = if self.imag_starts == 0 || self.imag_starts >= rows {
            posterior.clone()
        } else {
            let mut idx = rand::seq::index::sample(rng, rows, self.imag_starts).into_vec();
            idx.sort_unstable();
            posterior.select_rows(&idx)
        };
        let report = self.ac.update(&self.wm, &start, rng)?;
        if !(report.actor_loss.is_finite() && report.critic_loss.is_finite()) {
            return Err(TrainerError::Numeric(format!(
                "behavior losses non-finite (actor {:e}, critic {:e})",
                report.actor_loss, report.critic_loss
            )));
        }
        Ok(report)
    }

    /// Folds one observation into a single-row latent state. `None` for the
    /// previous action marks an episode start; an `rng` of `None` takes the
    /// posterior mean.
    pub fn observe(
        &self,
        prev: &WorldModelState<f64>,
        prev_action: Option<usize>,
        obs: &[u8],
        rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<WorldModelState<f64>> {
        let a = one_hot_row(prev_action);
        let o = Tensor::from_fn(&[1, obs.len()], |i| to_unit_range(obs[i]));
        let stoch = self.wm.config.stoch;
        let noise = match rng {
            Some(mut r) => standard_normal(&mut r, &[1, stoch]),
            None => Tensor::zeros(&[1, stoch]),
        };
        Ok(self.wm.filter(prev, &a, &o, &noise)?)
    }

    /// Samples an action, or takes the mode when `rng` is `None`.
    pub fn choose(
        &self,
        state: &WorldModelState<f64>,
        rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<usize> {
        let noise = rng.map(|mut r| self.ac.action_noise(&mut r, 1));
        let a = self.ac.act(state, noise.as_ref())?;
        let row = a.row(0);
        let best = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
        Ok(best)
    }

    pub fn initial_state(&self) -> WorldModelState<f64> {
        WorldModelState::initial(1, &self.wm.config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(
            path,
            &[
                &self.wm.params,
                &self.scales.params,
                &self.ac.actor_params,
                &self.ac.critic_params,
            ],
        )?;
        Ok(())
    }

    /// Loads the world model and harmonizer; actor and critic are loaded
    /// when present.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let entries = checkpoint::read_entries::<f64>(&mut std::io::BufReader::new(
            std::fs::File::open(path)?,
        ))?;
        checkpoint::assign(
            &entries,
            &mut [&mut self.wm.params, &mut self.scales.params],
        )?;
        if entries.iter().any(|(n, _)| n.starts_with("actor.")) {
            checkpoint::assign(
                &entries,
                &mut [&mut self.ac.actor_params, &mut self.ac.critic_params],
            )?;
        }
        Ok(())
    }

    pub fn log_scale(&self, task: Task) -> f64 {
        self.scales.log_scale(task)
    }
}

fn dwa_temperature(scheme: &WeightingScheme) -> f64 {
    match scheme {
        WeightingScheme::Dwa { temperature } => *temperature,
        _ => f64::INFINITY,
    }
}

fn one_hot_row(action: Option<usize>) -> TensorF64 {
    Tensor::from_fn(&[1, ACTIONS], |i| if Some(i) == action { 1.0 } else { 0.0 })
}

/// Stacks segments into a time-major batch. A stored [`NO_ACTION`] (the
/// reset step) becomes an all-zero action row.
pub fn segments_to_batch(segments: &[TrajectorySegment], obs_len: usize) -> SequenceBatch<f64> {
    let b = segments.len();
    let t = segments.first().map_or(0, |s| s.len());
    let n = t * b;
    let mut obs = Vec::with_capacity(n * obs_len);
    let mut actions = vec![0.0; n * ACTIONS];
    let mut rewards = Vec::with_capacity(n);
    for step in 0..t {
        for (j, seg) in segments.iter().enumerate() {
            obs.extend(
                seg.obs[step * obs_len..(step + 1) * obs_len]
                    .iter()
                    .map(|&v| to_unit_range(v)),
            );
            let a = seg.actions[step];
            if a != NO_ACTION {
                actions[(step * b + j) * ACTIONS + a as usize] = 1.0;
            }
            rewards.push(seg.rewards[step]);
        }
    }
    SequenceBatch {
        steps: t,
        batch: b,
        obs: Tensor::new(vec![n, obs_len], obs).unwrap(),
        actions: Tensor::new(vec![n, ACTIONS], actions).unwrap(),
        rewards: Tensor::new(vec![n, 1], rewards).unwrap(),
    }
}
