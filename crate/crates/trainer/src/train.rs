//! Online and offline training loops.

use std::path::{Path, PathBuf};
use std::time::Instant;

use hwm_envs::buffer::TrajectorySegment;
use hwm_envs::{DistractorGrid, Episode, ReplayBuffer};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{segments_to_batch, Agent};
use crate::config::ExperimentConfig;
use crate::error::{Result, TrainerError};
use crate::metrics::{MetricsRecord, MetricsWriter};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const FAILURE_CHECKPOINT_FILE: &str = "failure.ckpt";
pub const SUMMARY_FILE: &str = "run.json";
pub const BUFFER_FILE: &str = "buffer.bin";

/// Evaluation episodes use these environment seeds (plus the episode index)
/// in every run, so runs are compared on the same start configurations.
const EVAL_SEED_BASE: u64 = 0x5eed_0000;

/// Evaluation callback handed to an update that is due for one.
type EvalFn<'a> = &'a dyn Fn(&Agent) -> Result<f64>;

/// Independent random streams derived from the run seed.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Init = 0,
    Env = 1,
    Train = 2,
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

fn sampled(rng: &mut ChaCha8Rng) -> Option<&mut dyn rand::RngCore> {
    Some(rng)
}

/// Worker pool for evaluation, sized by `HWM_THREADS` when set.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("HWM_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| {
                TrainerError::Config(format!("HWM_THREADS must be a positive integer, got {v:?}"))
            })?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| TrainerError::Config(format!("cannot build thread pool: {e}")))
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub scheme: String,
    pub seed: u64,
    pub updates: u64,
    pub env_steps: u64,
    pub episodes: u64,
    /// Mean return of the last evaluation, if any.
    pub final_eval_return: Option<f64>,
    /// Every evaluation as `(env_steps, mean return)`.
    pub evals: Vec<(u64, f64)>,
    /// Undiscounted return of every training episode, in order.
    pub episode_returns: Vec<f64>,
}

struct RunDir {
    dir: PathBuf,
}

impl RunDir {
    fn create(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(CONFIG_FILE), cfg.render())?;
        Ok(Self {
            dir: dir.to_path_buf(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn finish(&self, summary: &RunSummary) -> Result<()> {
        let text = serde_json::to_string_pretty(summary)
            .map_err(|e| TrainerError::Metrics(e.to_string()))?;
        std::fs::write(self.path(SUMMARY_FILE), text)?;
        Ok(())
    }
}

/// Mean return of `cfg.eval_episodes` mode-action episodes.
pub fn evaluate(agent: &Agent, cfg: &ExperimentConfig, pool: &rayon::ThreadPool) -> Result<f64> {
    let returns: Vec<Result<f64>> = pool.install(|| {
        (0..cfg.eval_episodes as u64)
            .into_par_iter()
            .map(|k| eval_episode(agent, cfg, EVAL_SEED_BASE + k))
            .collect()
    });
    let returns = returns.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(returns.iter().sum::<f64>() / returns.len().max(1) as f64)
}

fn eval_episode(agent: &Agent, cfg: &ExperimentConfig, seed: u64) -> Result<f64> {
    let mut env = DistractorGrid::new(cfg.grid())?;
    let first = env.reset(seed);
    let mut state = agent.observe(&agent.initial_state(), None, &first.obs, None)?;
    let mut total = 0.0;
    while !env.is_done() {
        let a = agent.choose(&state, None)?;
        let step = env.step(a)?;
        total += step.reward;
        state = agent.observe(&state, Some(a), &step.obs, None)?;
    }
    Ok(total)
}

/// Mutable state of a training loop.
struct Trainer<'a> {
    cfg: &'a ExperimentConfig,
    agent: Agent,
    train_rng: ChaCha8Rng,
    metrics: MetricsWriter,
    start: Instant,
    updates: u64,
    run: &'a RunDir,
}

impl Trainer<'_> {
    /// One world-model update, plus a behavior update when `behavior`.
    fn update(
        &mut self,
        segments: &[TrajectorySegment],
        obs_len: usize,
        env_steps: u64,
        behavior: bool,
        eval: Option<EvalFn>,
    ) -> Result<Option<f64>> {
        let batch = segments_to_batch(segments, obs_len);
        let outcome = self.agent.world_model_step(&batch, &mut self.train_rng);
        let (wm, posterior) = match outcome {
            Ok(v) => v,
            Err(e) => return Err(self.fail(e)),
        };
        let bh = if behavior {
            match self.agent.behavior_step(&posterior, &mut self.train_rng) {
                Ok(r) => Some(r),
                Err(e) => return Err(self.fail(e)),
            }
        } else {
            None
        };
        let eval_return = match eval {
            Some(f) => Some(f(&self.agent)?),
            None => None,
        };
        let record = MetricsRecord {
            update: self.updates,
            env_steps,
            loss_o: wm.losses[0],
            loss_r: wm.losses[1],
            loss_d: wm.losses[2],
            sigma_o: wm.sigmas[0],
            sigma_r: wm.sigmas[1],
            sigma_d: wm.sigmas[2],
            weight_o: wm.weights[0],
            weight_r: wm.weights[1],
            weight_d: wm.weights[2],
            actor_entropy: bh.map(|b| b.actor_entropy),
            critic_loss: bh.map(|b| b.critic_loss),
            lambda_target_mean: bh.map(|b| b.lambda_target_mean),
            eval_return,
            wall_clock_s: self.start.elapsed().as_secs_f64(),
        };
        self.metrics.write(&record)?;
        self.updates += 1;
        Ok(eval_return)
    }

    /// Dumps the current parameters next to the metrics before reporting a
    /// numeric failure.
    fn fail(&self, e: TrainerError) -> TrainerError {
        if matches!(e, TrainerError::Numeric(_)) {
            let path = self.run.path(FAILURE_CHECKPOINT_FILE);
            match self.agent.save(&path) {
                Ok(()) => warn!(
                    "numeric failure at update {}; state saved to {}",
                    self.updates,
                    path.display()
                ),
                Err(s) => warn!(
                    "numeric failure at update {}; state dump failed: {s}",
                    self.updates
                ),
            }
        }
        e
    }
}

/// Online training: random-action prefill, then acting with the policy and
/// updating every `train_every` environment steps.
pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let (summary, _) = run_online(cfg, out, false)?;
    Ok(summary)
}

/// Trains a collector agent online and keeps every episode it experienced.
pub fn make_buffer(cfg: &ExperimentConfig, out: &Path) -> Result<(RunSummary, ReplayBuffer)> {
    let (summary, buffer) = run_online(cfg, out, true)?;
    buffer.save(&out.join(BUFFER_FILE))?;
    Ok((summary, buffer))
}

fn run_online(
    cfg: &ExperimentConfig,
    out: &Path,
    keep_all: bool,
) -> Result<(RunSummary, ReplayBuffer)> {
    cfg.validate()?;
    let run = RunDir::create(out, cfg)?;
    let pool = thread_pool()?;
    let grid = cfg.grid();
    let obs_len = grid.obs_len();
    let capacity = if keep_all {
        usize::MAX
    } else {
        cfg.buffer_capacity
    };
    let mut buffer = ReplayBuffer::new(&grid.obs_shape(), hwm_envs::grid::ACTIONS, capacity);
    let agent = Agent::new(cfg, &mut stream(cfg.seed, Stream::Init))?;
    agent.save(&run.path(CHECKPOINT_FILE))?;
    let mut trainer = Trainer {
        cfg,
        agent,
        train_rng: stream(cfg.seed, Stream::Train),
        metrics: MetricsWriter::create(&run.path(METRICS_FILE))?,
        start: Instant::now(),
        updates: 0,
        run: &run,
    };
    let mut env_rng = stream(cfg.seed, Stream::Env);
    let mut env = DistractorGrid::new(grid)?;

    let mut episode_returns = Vec::new();
    let mut evals = Vec::new();
    let mut first = env.reset(env_rng.random());
    let mut episode = Episode::start(&first);
    let mut state = trainer.agent.observe(
        &trainer.agent.initial_state(),
        None,
        &first.obs,
        sampled(&mut env_rng),
    )?;
    let mut ep_return = 0.0;

    let eval_fn = |agent: &Agent| evaluate(agent, cfg, &pool);
    for step in 1..=cfg.total_steps as u64 {
        let action = if step as usize <= cfg.prefill {
            env_rng.random_range(0..hwm_envs::grid::ACTIONS)
        } else {
            trainer.agent.choose(&state, sampled(&mut env_rng))?
        };
        let next = env.step(action)?;
        ep_return += next.reward;
        episode.push(action as u8, &next);
        if next.done {
            buffer.add(std::mem::take(&mut episode))?;
            episode_returns.push(ep_return);
            ep_return = 0.0;
            first = env.reset(env_rng.random());
            episode = Episode::start(&first);
            state = trainer.agent.observe(
                &trainer.agent.initial_state(),
                None,
                &first.obs,
                sampled(&mut env_rng),
            )?;
        } else {
            state =
                trainer
                    .agent
                    .observe(&state, Some(action), &next.obs, sampled(&mut env_rng))?;
        }

        let ready = step as usize >= cfg.prefill && buffer.valid_offsets(cfg.seq_len) > 0;
        if ready && step % cfg.train_every as u64 == 0 {
            let segments =
                buffer.sample_segments(cfg.batch_size, cfg.seq_len, &mut trainer.train_rng)?;
            let due = step % cfg.eval_every as u64 == 0;
            let result = trainer.update(
                &segments,
                obs_len,
                step,
                true,
                due.then_some(&eval_fn as EvalFn),
            )?;
            if let Some(r) = result {
                info!("env step {step}: eval return {r:.3}");
                evals.push((step, r));
            }
        }
    }
    trainer.agent.save(&run.path(CHECKPOINT_FILE))?;
    let summary = RunSummary {
        mode: if keep_all { "make-buffer" } else { "train" }.into(),
        scheme: cfg.scheme.clone(),
        seed: cfg.seed,
        updates: trainer.updates,
        env_steps: cfg.total_steps as u64,
        episodes: episode_returns.len() as u64,
        final_eval_return: evals.last().map(|&(_, r)| r),
        evals,
        episode_returns,
    };
    run.finish(&summary)?;
    Ok((summary, buffer))
}

/// Offline training on a fixed buffer: the same update loop without
/// environment interaction or evaluation. Records carry the environment-step
/// count an online run would have reached, `(update + 1) · train_every`.
pub fn offline_train(
    cfg: &ExperimentConfig,
    buffer: &ReplayBuffer,
    out: &Path,
) -> Result<RunSummary> {
    cfg.validate()?;
    let grid = cfg.grid();
    if buffer.obs_shape() != grid.obs_shape() {
        return Err(TrainerError::Config(format!(
            "buffer observations have shape {:?}, config expects {:?}",
            buffer.obs_shape(),
            grid.obs_shape()
        )));
    }
    let run = RunDir::create(out, cfg)?;
    let agent = Agent::new(cfg, &mut stream(cfg.seed, Stream::Init))?;
    agent.save(&run.path(CHECKPOINT_FILE))?;
    let mut trainer = Trainer {
        cfg,
        agent,
        train_rng: stream(cfg.seed, Stream::Train),
        metrics: MetricsWriter::create(&run.path(METRICS_FILE))?,
        start: Instant::now(),
        updates: 0,
        run: &run,
    };
    let updates = cfg.offline_update_count();
    for u in 0..updates as u64 {
        let segments =
            buffer.sample_segments(cfg.batch_size, cfg.seq_len, &mut trainer.train_rng)?;
        let steps = (u + 1) * trainer.cfg.train_every as u64;
        trainer.update(&segments, grid.obs_len(), steps, cfg.offline_behavior, None)?;
    }
    trainer.agent.save(&run.path(CHECKPOINT_FILE))?;
    let summary = RunSummary {
        mode: "offline-train".into(),
        scheme: cfg.scheme.clone(),
        seed: cfg.seed,
        updates: trainer.updates,
        env_steps: 0,
        episodes: 0,
        final_eval_return: None,
        evals: Vec::new(),
        episode_returns: Vec::new(),
    };
    run.finish(&summary)?;
    Ok(summary)
}
