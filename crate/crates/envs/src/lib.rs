//! Synthetic pixel environments and episodic replay storage.

pub mod buffer;
pub mod grid;

pub use buffer::{Episode, ReplayBuffer, TrajectorySegment};
pub use grid::{
    DistractorGrid, EnvError, EnvStep, GridConfig, GroundTruth, RewardMode, RANDOM_POLICY_RETURN,
};
