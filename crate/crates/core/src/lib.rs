//! Safe off-policy learning for contextual bandits whose action set contains
//! novel actions the logging policy never plays.
//!
//! The crate bundles a synthetic bandit world ([`environment`]), softmax MLP
//! policies ([`policy`]), learned reward models ([`reward_model`]), off-policy
//! estimators with a high-confidence lower bound ([`estimators`]), the
//! primal-dual learner ([`learners`]), staged deployment with safety-margin
//! accounting ([`depsue`]) and ground-truth metrics ([`evaluation`]).

pub mod data;
pub mod depsue;
pub mod environment;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod learners;
pub mod nn;
pub mod policy;
pub mod reward_model;
pub mod rng;

pub use data::{BanditDataset, Fold, LoggedSample};
pub use environment::{Environment, EnvironmentConfig, LoggingPolicySpec};
pub use error::{Error, Result};
pub use estimators::{HcopeConfig, SafetySpec};
pub use learners::{LagrangianState, TrainConfig};
pub use policy::{Policy, SoftmaxPolicy};
pub use reward_model::{RewardModel, RewardModelConfig, RewardModelVariant, RewardPredictor};
pub use rng::RngStream;
