//! Off-policy training: hindsight replay, soft actor-critic updates, the
//! epoch loop, and deterministic evaluation.

pub mod buffer;
pub mod eval;
pub mod sac;
pub mod trainer;

pub use buffer::{her_relabel, EpisodeBuffer, HerStrategy, Minibatch, Transition};
pub use eval::{evaluate, evaluate_policy, EvalReport};
pub use sac::{sac_update, SacConfig, SacLosses, SacState};
pub use trainer::{init_sac, train_policy, EpochRecord, TrainOutcome, TrainParams, Trainer};
