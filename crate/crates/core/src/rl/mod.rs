//! Model-based policy optimisation: a KL-regularised actor-critic trained on
//! real transitions and on one-step transitions sampled from a learned
//! distributional dynamics model.

mod buffer;
mod config;
mod env;
mod model;
mod policy;
mod train;

pub use buffer::{Transition, TransitionBuffer};
pub use config::AgentConfig;
pub use env::{Env, EnvStep, MicrogridEnv, ObsScaler, ToyMdp};
pub use model::{forecast_augment, model_sample, model_update, DynamicsModel, SampleMode};
pub use policy::{advantage, policy_act, policy_probs, ppo_update, softmax, surrogate, PpoBatchItem, PpoStats};
pub use train::{
    dyna_train, evaluate, read_training_log, train_agent, train_ppo, write_training_log, Agent, CurvePoint,
    TrainOutcome,
};

use crate::nn::NnError;
use crate::sim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum RlError {
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("observation width {found}, expected {expected}")]
    Shape { expected: usize, found: usize },
    #[error("action index {0} out of range")]
    InvalidAction(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
