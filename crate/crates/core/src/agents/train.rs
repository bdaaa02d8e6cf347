use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ActionDecision, Agent, AgentError, DecisionSource, Transition};
use crate::envs::{EnvError, Environment, LegalMask, Observation};
use crate::tutor::{TutorGate, TutorStats};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionCounts {
    pub policy: u64,
    pub tutor_fresh: u64,
    pub tutor_reused: u64,
    pub random_fallback: u64,
}

impl DecisionCounts {
    fn record(&mut self, source: DecisionSource) {
        match source {
            DecisionSource::Policy => self.policy += 1,
            DecisionSource::TutorFresh => self.tutor_fresh += 1,
            DecisionSource::TutorReused => self.tutor_reused += 1,
            DecisionSource::RandomFallback => self.random_fallback += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.policy + self.tutor_fresh + self.tutor_reused + self.random_fallback
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Undiscounted return of every completed episode, in order.
    pub episode_returns: Vec<f64>,
    pub episode_lengths: Vec<u64>,
    pub steps: u64,
    pub updates: u64,
    pub decisions: DecisionCounts,
    pub tutor: Option<TutorStats>,
    /// Schedule position after training, when a tutor was attached.
    pub final_tau: Option<u64>,
}

impl TrainingLog {
    /// Per-step series: each step carries the return of the episode containing it.
    pub fn step_curve(&self) -> Vec<f64> {
        self.episode_returns.iter().zip(&self.episode_lengths).flat_map(|(&r, &len)| std::iter::repeat(r).take(len as usize)).collect()
    }
}

/// What the loop saw at one step, for callers that want to inspect decisions.
pub struct StepEvent<'a> {
    pub step: u64,
    pub observation: &'a Observation,
    pub legal: LegalMask,
    pub decision: &'a ActionDecision,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("environment rejected a step: {0}")]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("agent expects {agent_inputs} inputs and {agent_actions} actions, environment provides {env_inputs} and {env_actions}")]
    ShapeMismatch { agent_inputs: usize, agent_actions: usize, env_inputs: usize, env_actions: usize },
}

/// One draw against the gate: the tutor's advice when engaged, the agent's own choice otherwise.
pub fn select_action(agent: &mut dyn Agent, obs: &Observation, features: &[f64], legal: LegalMask, gate: Option<&mut TutorGate>) -> ActionDecision {
    match gate {
        None => agent.act(features, legal, false),
        Some(gate) => {
            if gate.engage() {
                let advice = gate.advise(obs, legal);
                let (log_prob, value) = agent.evaluate(features, legal, advice.action);
                ActionDecision { action: advice.action, source: advice.source.into(), log_prob, value }
            } else {
                agent.act(features, legal, true)
            }
        }
    }
}

pub fn train(
    agent: &mut dyn Agent,
    env: &mut dyn Environment,
    gate: Option<&mut TutorGate>,
    total_steps: u64,
    seed: u64,
) -> Result<TrainingLog, TrainError> {
    train_observed(agent, env, gate, total_steps, seed, |_| {})
}

/// [`train`] with a callback invoked after every environment step.
pub fn train_observed(
    agent: &mut dyn Agent,
    env: &mut dyn Environment,
    mut gate: Option<&mut TutorGate>,
    total_steps: u64,
    seed: u64,
    mut on_step: impl FnMut(&StepEvent<'_>),
) -> Result<TrainingLog, TrainError> {
    let kind = env.kind();
    let net = agent.networks()[0];
    if net.input_dim() != kind.feature_len() || net.output_dim() != env.action_count() {
        return Err(TrainError::ShapeMismatch {
            agent_inputs: net.input_dim(),
            agent_actions: net.output_dim(),
            env_inputs: kind.feature_len(),
            env_actions: env.action_count(),
        });
    }
    let mut log = TrainingLog::default();
    let mut episode_seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = env.reset(episode_seeds.gen());
    let mut features = obs.features();
    let mut legal = env.legal_actions();
    let (mut episode_return, mut episode_len) = (0.0, 0u64);
    for step in 0..total_steps {
        let decision = select_action(agent, &obs, &features, legal, gate.as_deref_mut());
        log.decisions.record(decision.source);
        let result = env.step(decision.action)?;
        if let Some(g) = gate.as_deref_mut() {
            g.advance();
        }
        let next_obs = result.observation;
        let next_features = next_obs.features();
        let next_legal = env.legal_actions();
        episode_return += result.reward;
        episode_len += 1;
        on_step(&StepEvent { step, observation: &obs, legal, decision: &decision, reward: result.reward, done: result.done() });
        agent.observe(Transition {
            features: std::mem::take(&mut features),
            legal,
            action: decision.action,
            reward: result.reward,
            next_features: next_features.clone(),
            next_legal,
            terminated: result.terminated,
            truncated: result.truncated,
            log_prob: decision.log_prob,
            value: decision.value,
        })?;
        if result.done() {
            log.episode_returns.push(episode_return);
            log.episode_lengths.push(episode_len);
            episode_return = 0.0;
            episode_len = 0;
            obs = env.reset(episode_seeds.gen());
            features = obs.features();
            legal = env.legal_actions();
        } else {
            obs = next_obs;
            features = next_features;
            legal = next_legal;
        }
        log.steps += 1;
    }
    log.updates = agent.updates();
    if let Some(g) = gate {
        log.tutor = Some(g.stats().clone());
        log.final_tau = Some(g.schedule().tau);
    }
    Ok(log)
}
