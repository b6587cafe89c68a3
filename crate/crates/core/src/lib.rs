//! Harmonized multi-task world-model learning on a small dense autodiff core.
//!
//! The crate is generic over the floating-point [`Scalar`]; the `*F64` and
//! `*F32` aliases below name the common instantiations.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod behavior;
pub mod checkpoint;
pub mod harmonizer;
pub mod nn;
pub mod optim;
pub mod param;
pub mod scalar;
pub mod world_model;

pub use autodiff::{AutodiffError, Gradients, OpKind, Tape, Tensor, Var};
pub use behavior::{ActionSpace, ActorCritic, BehaviorConfig};
pub use harmonizer::{LogScales, LossTriple, Task, WeightingScheme};
pub use optim::{Adam, AdamConfig};
pub use param::{Binding, Bound, ParamId, ParamStore};
pub use scalar::Scalar;
pub use world_model::{
    KlConfig, KlMode, LatentState, SequenceBatch, WorldModel, WorldModelConfig, WorldModelState,
};

pub type TensorF64 = Tensor<f64>;
pub type TensorF32 = Tensor<f32>;
pub type TapeF64 = Tape<f64>;
pub type TapeF32 = Tape<f32>;
pub type ParamStoreF64 = ParamStore<f64>;
pub type LogScalesF64 = LogScales<f64>;
pub type LogScalesF32 = LogScales<f32>;
pub type WorldModelF64 = WorldModel<f64>;
pub type WorldModelF32 = WorldModel<f32>;
pub type ActorCriticF64 = ActorCritic<f64>;
pub type ActorCriticF32 = ActorCritic<f32>;
