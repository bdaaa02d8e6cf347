//! DQN, PPO and A2C learners whose action choice can be handed to a tutor.

mod actor_critic;
mod dqn;
pub mod losses;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use actor_critic::{A2cAgent, A2cConfig, ActorCritic, PpoAgent, PpoConfig, RolloutStep};
pub use dqn::{DqnAgent, DqnConfig, ReplayBuffer, ReplayEntry};
pub use train::{select_action, train, train_observed, DecisionCounts, StepEvent, TrainError, TrainingLog};

use crate::envs::{ActionId, LegalMask};
use crate::nn::{Mlp, NnError};
use crate::tutor::AdviceSource;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSource {
    Policy,
    TutorFresh,
    TutorReused,
    RandomFallback,
}

impl DecisionSource {
    pub fn is_tutor(self) -> bool {
        !matches!(self, DecisionSource::Policy)
    }
}

impl From<AdviceSource> for DecisionSource {
    fn from(source: AdviceSource) -> Self {
        match source {
            AdviceSource::Fresh => DecisionSource::TutorFresh,
            AdviceSource::Reused => DecisionSource::TutorReused,
            AdviceSource::RandomFallback => DecisionSource::RandomFallback,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionDecision {
    pub action: ActionId,
    pub source: DecisionSource,
    /// Log-probability of `action` under the current actor (actor-critic only).
    pub log_prob: Option<f64>,
    /// Critic estimate for the current state (actor-critic only).
    pub value: Option<f64>,
}

/// Everything an agent learns from after one environment step.
#[derive(Clone, Debug)]
pub struct Transition {
    pub features: Vec<f64>,
    pub legal: LegalMask,
    pub action: ActionId,
    pub reward: f64,
    pub next_features: Vec<f64>,
    pub next_legal: LegalMask,
    pub terminated: bool,
    pub truncated: bool,
    pub log_prob: Option<f64>,
    pub value: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateSummary {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("replay buffer holds {len} transitions, need {needed}")]
    BufferTooSmall { len: usize, needed: usize },
    #[error("rollout is empty")]
    EmptyRollout,
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dqn,
    Ppo,
    A2c,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Dqn, Algorithm::Ppo, Algorithm::A2c];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Dqn => "dqn",
            Algorithm::Ppo => "ppo",
            Algorithm::A2c => "a2c",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dqn" => Ok(Algorithm::Dqn),
            "ppo" => Ok(Algorithm::Ppo),
            "a2c" => Ok(Algorithm::A2c),
            other => Err(format!("unknown algorithm `{other}`")),
        }
    }
}

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

pub(crate) fn layer_dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input);
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims
}

pub trait Agent: Send {
    fn algorithm(&self) -> Algorithm;

    /// The agent's own choice. `tutored` tells the agent a tutor gate is active.
    fn act(&mut self, features: &[f64], legal: LegalMask, tutored: bool) -> ActionDecision;

    /// Log-probability of `action` and the state value under the current networks.
    fn evaluate(&self, features: &[f64], legal: LegalMask, action: ActionId) -> (Option<f64>, Option<f64>);

    /// Stores one transition and trains when the algorithm's schedule says so.
    fn observe(&mut self, transition: Transition) -> Result<Option<UpdateSummary>, AgentError>;

    fn networks(&self) -> Vec<&Mlp>;

    fn updates(&self) -> u64;
}

/// Agent with default hyperparameters for an environment's feature and action sizes.
pub fn make_agent(algorithm: Algorithm, feature_len: usize, action_count: usize, decay_steps: u64, seed: u64) -> Box<dyn Agent> {
    match algorithm {
        Algorithm::Dqn => {
            Box::new(DqnAgent::new(DqnConfig { epsilon_decay_steps: decay_steps, ..DqnConfig::default() }, feature_len, action_count, seed))
        }
        Algorithm::Ppo => Box::new(PpoAgent::new(PpoConfig::default(), feature_len, action_count, seed)),
        Algorithm::A2c => Box::new(A2cAgent::new(A2cConfig::default(), feature_len, action_count, seed)),
    }
}
