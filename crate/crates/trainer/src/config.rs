//! Flat `key = value` experiment configuration.
//!
//! One setting per line; `#` starts a comment. Every key has a default, so
//! an empty file is a valid configuration. Unknown keys and malformed values
//! are errors. [`ExperimentConfig::render`] writes the full key set in the
//! same format, which is also the documented schema.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use hwm_core::behavior::{ActionSpace, BehaviorConfig};
use hwm_core::harmonizer::WeightingScheme;
use hwm_core::world_model::{KlConfig, KlMode, WorldModelConfig};
use hwm_envs::grid::ACTIONS;
use hwm_envs::{GridConfig, RewardMode};

use crate::error::{Result, TrainerError};

/// Scheme names accepted by `scheme` and `--scheme`.
pub const SCHEMES: [&str; 6] = [
    "fixed",
    "reciprocal",
    "harmony",
    "harmony-rectified",
    "uw",
    "dwa",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env_size: usize,
    pub env_distractor: f64,
    pub env_max_steps: usize,
    pub env_reward: RewardMode,

    pub scheme: String,
    pub wo: f64,
    pub wr: f64,
    pub wd: f64,
    pub harmony_learn_dynamics: bool,
    pub dwa_temperature: f64,
    /// Updates per DWA epoch.
    pub dwa_window: usize,
    pub kl_mode: KlMode,
    pub kl_alpha: f64,
    pub kl_free_bits: f64,

    pub model_deter: usize,
    pub model_stoch: usize,
    pub model_hidden: usize,
    pub model_std_floor: f64,
    pub behavior_hidden: usize,

    pub wm_lr: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub eta: f64,
    pub horizon: usize,
    /// Imagination start states drawn from each batch's posterior states;
    /// 0 uses all of them.
    pub imag_starts: usize,

    pub seq_len: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,

    pub total_steps: usize,
    pub prefill: usize,
    pub train_every: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,

    /// Offline update count; 0 means `total_steps / train_every`.
    pub offline_updates: usize,
    pub offline_behavior: bool,

    pub probe_hidden: usize,
    /// Number of linear layers in the probe.
    pub probe_layers: usize,
    pub probe_steps: usize,
    pub probe_batch: usize,
    pub probe_lr: f64,
    /// Segments of length `seq_len` encoded into the probe dataset.
    pub probe_segments: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env_size: 8,
            env_distractor: 0.7,
            env_max_steps: 100,
            env_reward: RewardMode::Dense,
            scheme: "fixed".into(),
            wo: 1.0,
            wr: 1.0,
            wd: 1.0,
            harmony_learn_dynamics: true,
            dwa_temperature: 2.0,
            dwa_window: 100,
            kl_mode: KlMode::Plain,
            kl_alpha: 0.8,
            kl_free_bits: 1.0,
            // Network sizes are desk scale; the reference RSSM has 1024 units.
            model_deter: 64,
            model_stoch: 16,
            model_hidden: 128,
            model_std_floor: 0.01,
            behavior_hidden: 128,
            wm_lr: 3e-4,
            actor_lr: 8e-5,
            critic_lr: 8e-5,
            gamma: 0.99,
            lambda: 0.95,
            eta: 1e-4,
            horizon: 15,
            // A subset of the 256 posterior states keeps one behavior update
            // near the cost of a world-model update on one core.
            imag_starts: 64,
            // Segment length 50 in the reference; 16 matches the short grid
            // episodes.
            seq_len: 16,
            batch_size: 16,
            // 10^6 in the reference; runs here never exceed 10^5 steps.
            buffer_capacity: 100_000,
            total_steps: 100_000,
            prefill: 1000,
            train_every: 5,
            // Not fixed by the reference for this regime.
            eval_every: 2000,
            eval_episodes: 10,
            seed: 0,
            offline_updates: 0,
            offline_behavior: true,
            probe_hidden: 400,
            probe_layers: 4,
            probe_steps: 1000,
            probe_batch: 128,
            probe_lr: 1e-3,
            // 10,000 segments of length 50 in the reference.
            probe_segments: 500,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| TrainerError::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn kl_mode_name(m: KlMode) -> &'static str {
    match m {
        KlMode::Plain => "plain",
        KlMode::Split => "split",
    }
}

fn reward_name(r: RewardMode) -> &'static str {
    match r {
        RewardMode::Dense => "dense",
        RewardMode::Sparse => "sparse",
    }
}

macro_rules! settings {
    ($( $key:literal => $field:ident ),* $(,)?) => {
        impl ExperimentConfig {
            /// Every key in file order.
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            /// Applies one `key = value` setting.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    "env.reward" => {
                        self.env_reward = value.parse().map_err(|e: hwm_envs::EnvError| TrainerError::Config(e.to_string()))?
                    }
                    "kl.mode" => {
                        self.kl_mode = match value {
                            "plain" => KlMode::Plain,
                            "split" => KlMode::Split,
                            _ => return Err(TrainerError::Config(format!("kl.mode must be plain or split, got {value:?}"))),
                        }
                    }
                    "scheme" => {
                        if !SCHEMES.contains(&value) {
                            return Err(TrainerError::Config(format!(
                                "scheme must be one of {}, got {value:?}",
                                SCHEMES.join(", ")
                            )));
                        }
                        self.scheme = value.to_string();
                    }
                    $($key => self.$field = parse($key, value)?,)*
                    _ => return Err(TrainerError::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            /// `(key, value)` for every setting, in file order.
            pub fn pairs(&self) -> Vec<(&'static str, String)> {
                let mut out = vec![
                    ("env.reward", reward_name(self.env_reward).to_string()),
                    ("scheme", self.scheme.clone()),
                    ("kl.mode", kl_mode_name(self.kl_mode).to_string()),
                ];
                $(out.push(($key, self.$field.to_string()));)*
                out
            }
        }
    };
}

settings! {
    "env.size" => env_size,
    "env.distractor" => env_distractor,
    "env.max_steps" => env_max_steps,
    "wo" => wo,
    "wr" => wr,
    "wd" => wd,
    "harmony.learn_dynamics" => harmony_learn_dynamics,
    "dwa.temperature" => dwa_temperature,
    "dwa.window" => dwa_window,
    "kl.alpha" => kl_alpha,
    "kl.free_bits" => kl_free_bits,
    "model.deter" => model_deter,
    "model.stoch" => model_stoch,
    "model.hidden" => model_hidden,
    "model.std_floor" => model_std_floor,
    "behavior.hidden" => behavior_hidden,
    "wm_lr" => wm_lr,
    "actor_lr" => actor_lr,
    "critic_lr" => critic_lr,
    "gamma" => gamma,
    "lambda" => lambda,
    "eta" => eta,
    "horizon" => horizon,
    "imag_starts" => imag_starts,
    "seq_len" => seq_len,
    "batch_size" => batch_size,
    "buffer_capacity" => buffer_capacity,
    "total_steps" => total_steps,
    "prefill" => prefill,
    "train_every" => train_every,
    "eval_every" => eval_every,
    "eval_episodes" => eval_episodes,
    "seed" => seed,
    "offline.updates" => offline_updates,
    "offline.behavior" => offline_behavior,
    "probe.hidden" => probe_hidden,
    "probe.layers" => probe_layers,
    "probe.steps" => probe_steps,
    "probe.batch" => probe_batch,
    "probe.lr" => probe_lr,
    "probe.segments" => probe_segments,
}

impl ExperimentConfig {
    /// Parses the file format on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                TrainerError::Config(format!("line {}: expected key = value, got {raw:?}", n + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| TrainerError::Config(format!("line {}: {}", n + 1, strip(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainerError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// The full configuration in the file format.
    pub fn render(&self) -> String {
        let mut keys: Vec<_> = self.pairs();
        let order = |k: &str| {
            Self::ALL_KEYS
                .iter()
                .position(|&x| x == k)
                .unwrap_or(usize::MAX)
        };
        keys.sort_by_key(|(k, _)| order(k));
        keys.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Keys in documented order, including the ones with custom parsing.
    pub const ALL_KEYS: &'static [&'static str] = &[
        "env.size",
        "env.distractor",
        "env.max_steps",
        "env.reward",
        "scheme",
        "wo",
        "wr",
        "wd",
        "harmony.learn_dynamics",
        "dwa.temperature",
        "dwa.window",
        "kl.mode",
        "kl.alpha",
        "kl.free_bits",
        "model.deter",
        "model.stoch",
        "model.hidden",
        "model.std_floor",
        "behavior.hidden",
        "wm_lr",
        "actor_lr",
        "critic_lr",
        "gamma",
        "lambda",
        "eta",
        "horizon",
        "imag_starts",
        "seq_len",
        "batch_size",
        "buffer_capacity",
        "total_steps",
        "prefill",
        "train_every",
        "eval_every",
        "eval_episodes",
        "seed",
        "offline.updates",
        "offline.behavior",
        "probe.hidden",
        "probe.layers",
        "probe.steps",
        "probe.batch",
        "probe.lr",
        "probe.segments",
    ];

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainerError::Config(m));
        self.grid()
            .validate()
            .map_err(|e| TrainerError::Config(e.to_string()))?;
        self.scheme().validate()?;
        self.kl().validate()?;
        self.behavior().validate()?;
        if self.seq_len == 0 || self.batch_size == 0 {
            return bad("seq_len and batch_size must be positive".into());
        }
        if self.train_every == 0 {
            return bad("train_every must be positive".into());
        }
        if self.eval_every == 0 || !self.eval_every.is_multiple_of(self.train_every) {
            return bad(format!(
                "eval_every ({}) must be a positive multiple of train_every ({})",
                self.eval_every, self.train_every
            ));
        }
        if self.dwa_window == 0 {
            return bad("dwa.window must be positive".into());
        }
        if [
            self.model_deter,
            self.model_stoch,
            self.model_hidden,
            self.behavior_hidden,
        ]
        .contains(&0)
        {
            return bad("network sizes must be positive".into());
        }
        if !(self.model_std_floor > 0.0) {
            return bad("model.std_floor must be positive".into());
        }
        if [self.wm_lr, self.actor_lr, self.critic_lr, self.probe_lr]
            .iter()
            .any(|&lr| !(lr > 0.0))
        {
            return bad("learning rates must be positive".into());
        }
        if self.buffer_capacity < self.seq_len {
            return bad("buffer_capacity must hold at least one segment".into());
        }
        if self.probe_layers == 0 || self.probe_hidden == 0 || self.probe_batch == 0 {
            return bad("probe sizes must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> GridConfig {
        GridConfig {
            size: self.env_size,
            distractor: self.env_distractor,
            max_steps: self.env_max_steps,
            reward: self.env_reward,
        }
    }

    pub fn scheme(&self) -> WeightingScheme {
        match self.scheme.as_str() {
            "reciprocal" => WeightingScheme::Reciprocal,
            "harmony" | "harmony-rectified" => WeightingScheme::Harmony {
                rectified: self.scheme == "harmony-rectified",
                learn_dynamics: self.harmony_learn_dynamics,
            },
            "uw" => WeightingScheme::UncertaintyWeighting,
            "dwa" => WeightingScheme::Dwa {
                temperature: self.dwa_temperature,
            },
            _ => WeightingScheme::Fixed {
                wo: self.wo,
                wr: self.wr,
                wd: self.wd,
            },
        }
    }

    pub fn kl(&self) -> KlConfig {
        KlConfig {
            mode: self.kl_mode,
            alpha: self.kl_alpha,
            free_bits: self.kl_free_bits,
        }
    }

    pub fn world_model(&self) -> WorldModelConfig {
        let grid = self.grid();
        WorldModelConfig {
            obs_dim: grid.obs_len(),
            action_dim: ACTIONS,
            deter: self.model_deter,
            stoch: self.model_stoch,
            hidden: self.model_hidden,
            std_floor: self.model_std_floor,
        }
    }

    pub fn behavior(&self) -> BehaviorConfig {
        BehaviorConfig {
            action_space: ActionSpace::Discrete(ACTIONS),
            horizon: self.horizon,
            gamma: self.gamma,
            lambda: self.lambda,
            eta: self.eta,
            hidden: self.behavior_hidden,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            ..BehaviorConfig::default()
        }
    }

    pub fn offline_update_count(&self) -> usize {
        if self.offline_updates > 0 {
            self.offline_updates
        } else {
            self.total_steps / self.train_every
        }
    }
}

fn strip(e: TrainerError) -> String {
    match e {
        TrainerError::Config(m) => m,
        other => other.to_string(),
    }
}
