use std::io;

use hwm_core::behavior::BehaviorError;
use hwm_core::checkpoint::CheckpointError;
use hwm_core::harmonizer::HarmonizerError;
use hwm_core::world_model::WorldModelError;
use hwm_envs::buffer::BufferError;
use hwm_envs::EnvError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("buffer: {0}")]
    Buffer(#[from] BufferError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("world model: {0}")]
    WorldModel(WorldModelError),
    #[error("behavior: {0}")]
    Behavior(BehaviorError),
    #[error("metrics: {0}")]
    Metrics(String),
}

impl TrainerError {
    /// Process exit code: 2 for configuration problems, 3 for numeric
    /// failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            TrainerError::Config(_) => 2,
            TrainerError::Numeric(_) => 3,
            _ => 1,
        }
    }
}

impl From<WorldModelError> for TrainerError {
    fn from(e: WorldModelError) -> Self {
        match e {
            WorldModelError::NonFinite(_) | WorldModelError::StdBelowFloor { .. } => {
                TrainerError::Numeric(e.to_string())
            }
            WorldModelError::Config(m) => TrainerError::Config(m),
            other => TrainerError::WorldModel(other),
        }
    }
}

impl From<BehaviorError> for TrainerError {
    fn from(e: BehaviorError) -> Self {
        match e {
            BehaviorError::Config(m) => TrainerError::Config(m),
            BehaviorError::WorldModel(w) => w.into(),
            BehaviorError::EmptyRollout => TrainerError::Numeric(e.to_string()),
            other => TrainerError::Behavior(other),
        }
    }
}

impl From<HarmonizerError> for TrainerError {
    fn from(e: HarmonizerError) -> Self {
        match e {
            HarmonizerError::InvalidParameter(m) => TrainerError::Config(m),
            other => TrainerError::Numeric(other.to_string()),
        }
    }
}

impl From<hwm_core::AutodiffError> for TrainerError {
    fn from(e: hwm_core::AutodiffError) -> Self {
        TrainerError::WorldModel(WorldModelError::Autodiff(e))
    }
}

pub type Result<T, E = TrainerError> = std::result::Result<T, E>;
