//! Training loops, offline analysis protocols and the `hwm` command line
//! for harmonized world-model agents on the distractor grid.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod bench;
pub mod config;
pub mod error;
pub mod export;
pub mod metrics;
pub mod probe;
pub mod train;

pub use agent::Agent;
pub use config::ExperimentConfig;
pub use error::{Result, TrainerError};
pub use metrics::{read_metrics, MetricsRecord};
pub use train::{make_buffer, offline_train, train, RunSummary};
