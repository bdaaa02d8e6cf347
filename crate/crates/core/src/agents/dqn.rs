use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{mse_with_grad, td_targets};
use super::{layer_dims, ActionDecision, Agent, AgentError, Algorithm, DecisionSource, Transition, UpdateSummary, DEFAULT_HIDDEN};
use crate::envs::{ActionId, LegalMask};
use crate::nn::{Activation, Adam, AdamConfig, Mlp};
use crate::tutor::policies::random_legal;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub target_sync_interval: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    /// Keep epsilon-greedy exploration on while a tutor is active.
    pub epsilon_with_tutor: bool,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            gamma: 0.99,
            buffer_capacity: 1000,
            batch_size: 32,
            target_sync_interval: 100,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 1000,
            epsilon_with_tutor: false,
            max_grad_norm: 10.0,
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayEntry {
    pub features: Vec<f64>,
    pub action: ActionId,
    pub reward: f64,
    pub next_features: Vec<f64>,
    pub next_legal: LegalMask,
    pub done: bool,
}

/// Fixed-capacity ring buffer; the oldest entry is overwritten first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    entries: Vec<ReplayEntry>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self { entries: Vec::with_capacity(capacity), capacity, next: 0 }
    }

    pub fn push(&mut self, entry: ReplayEntry) {
        if self.entries.len() < self.capacity {
            self.entries.push(entry);
        } else {
            self.entries[self.next] = entry;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }
}

fn masked_argmax(values: &[f64], legal: LegalMask) -> ActionId {
    let mut best: Option<(usize, f64)> = None;
    for a in legal.iter().filter(|a| a.0 < values.len()) {
        if best.map_or(true, |(_, v)| values[a.0] > v) {
            best = Some((a.0, values[a.0]));
        }
    }
    ActionId(best.map_or(0, |(a, _)| a))
}

fn masked_max(values: &[f64], legal: LegalMask) -> f64 {
    legal.iter().filter(|a| a.0 < values.len()).map(|a| values[a.0]).fold(f64::NEG_INFINITY, f64::max)
}

pub struct DqnAgent {
    config: DqnConfig,
    q_net: Mlp,
    target_net: Mlp,
    optimizer: Adam,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    steps: u64,
    updates: u64,
}

impl DqnAgent {
    pub fn new(config: DqnConfig, feature_len: usize, action_count: usize, seed: u64) -> Self {
        let dims = layer_dims(feature_len, &config.hidden, action_count);
        let q_net = Mlp::new(&dims, Activation::Relu, seed);
        Self {
            target_net: q_net.clone(),
            q_net,
            optimizer: Adam::new(AdamConfig::with_learning_rate(config.learning_rate)),
            replay: ReplayBuffer::new(config.buffer_capacity),
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9)),
            steps: 0,
            updates: 0,
            config,
        }
    }

    pub fn config(&self) -> &DqnConfig {
        &self.config
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn q_net(&self) -> &Mlp {
        &self.q_net
    }

    pub fn q_net_mut(&mut self) -> &mut Mlp {
        &mut self.q_net
    }

    pub fn target_net(&self) -> &Mlp {
        &self.target_net
    }

    pub fn sync_target(&mut self) {
        self.target_net.copy_from(&self.q_net);
    }

    pub fn q_values(&self, features: &[f64]) -> Vec<f64> {
        self.q_net.forward(features).expect("feature length matches network input")
    }

    /// Linear decay from `epsilon_start` to `epsilon_end` over `epsilon_decay_steps` steps.
    pub fn epsilon(&self) -> f64 {
        let c = &self.config;
        if self.steps >= c.epsilon_decay_steps {
            return c.epsilon_end;
        }
        let frac = self.steps as f64 / c.epsilon_decay_steps as f64;
        c.epsilon_start + frac * (c.epsilon_end - c.epsilon_start)
    }

    /// One gradient step on a uniformly sampled minibatch; returns the TD loss.
    pub fn update(&mut self) -> Result<f64, AgentError> {
        let batch = self.config.batch_size;
        if self.replay.len() < batch || batch == 0 {
            return Err(AgentError::BufferTooSmall { len: self.replay.len(), needed: batch.max(1) });
        }
        let picks = index::sample(&mut self.rng, self.replay.len(), batch).into_vec();
        let entries: Vec<&ReplayEntry> = picks.iter().map(|&i| &self.replay.entries[i]).collect();
        let inputs: Vec<Vec<f64>> = entries.iter().map(|e| e.features.clone()).collect();
        let q = self.q_net.forward_recorded(&inputs)?;
        let mut next_max = Vec::with_capacity(batch);
        for e in &entries {
            if e.done {
                next_max.push(0.0);
            } else {
                next_max.push(masked_max(&self.target_net.forward(&e.next_features)?, e.next_legal));
            }
        }
        let rewards: Vec<f64> = entries.iter().map(|e| e.reward).collect();
        let dones: Vec<bool> = entries.iter().map(|e| e.done).collect();
        let targets = td_targets(&rewards, &next_max, &dones, self.config.gamma);
        let predicted: Vec<f64> = entries.iter().zip(&q).map(|(e, row)| row[e.action.0]).collect();
        let (loss, grad) = mse_with_grad(&predicted, &targets);
        let output_grads: Vec<Vec<f64>> = entries
            .iter()
            .zip(&grad)
            .map(|(e, &g)| {
                let mut row = vec![0.0; self.q_net.output_dim()];
                row[e.action.0] = g;
                row
            })
            .collect();
        let mut grads = self.q_net.backward(&output_grads)?;
        self.q_net.clear_trace();
        grads.clip_norm(self.config.max_grad_norm);
        self.optimizer.step(self.q_net.params_mut(), &grads)?;
        self.updates += 1;
        if self.config.target_sync_interval > 0 && self.updates % self.config.target_sync_interval == 0 {
            self.sync_target();
        }
        Ok(loss)
    }
}

impl Agent for DqnAgent {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Dqn
    }

    fn act(&mut self, features: &[f64], legal: LegalMask, tutored: bool) -> ActionDecision {
        let explore = !tutored || self.config.epsilon_with_tutor;
        let action = if explore && self.rng.gen::<f64>() < self.epsilon() {
            random_legal(legal, &mut self.rng)
        } else {
            masked_argmax(&self.q_values(features), legal)
        };
        ActionDecision { action, source: DecisionSource::Policy, log_prob: None, value: None }
    }

    fn evaluate(&self, _features: &[f64], _legal: LegalMask, _action: ActionId) -> (Option<f64>, Option<f64>) {
        (None, None)
    }

    fn observe(&mut self, t: Transition) -> Result<Option<UpdateSummary>, AgentError> {
        self.replay.push(ReplayEntry {
            features: t.features,
            action: t.action,
            reward: t.reward,
            next_features: t.next_features,
            next_legal: t.next_legal,
            done: t.terminated,
        });
        self.steps += 1;
        if self.replay.len() < self.config.batch_size.max(1) {
            return Ok(None);
        }
        let loss = self.update()?;
        Ok(Some(UpdateSummary { policy_loss: 0.0, value_loss: loss, entropy: 0.0 }))
    }

    fn networks(&self) -> Vec<&Mlp> {
        vec![&self.q_net, &self.target_net]
    }

    fn updates(&self) -> u64 {
        self.updates
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn transition(features: Vec<f64>, action: usize, reward: f64, done: bool) -> Transition {
        Transition {
            next_features: features.iter().map(|x| x + 1.0).collect(),
            features,
            legal: LegalMask::all(2),
            action: ActionId(action),
            reward,
            next_legal: LegalMask::all(2),
            terminated: done,
            truncated: false,
            log_prob: None,
            value: None,
        }
    }

    fn zero_agent(config: DqnConfig) -> DqnAgent {
        let mut agent = DqnAgent::new(config, 3, 2, 0);
        agent.q_net_mut().params_mut().iter_mut().for_each(|w| *w = 0.0);
        agent.sync_target();
        agent
    }

    #[test]
    fn update_needs_a_full_batch() {
        let mut agent = DqnAgent::new(DqnConfig::default(), 3, 2, 0);
        for _ in 0..31 {
            assert!(agent.observe(transition(vec![0.1, 0.2, 0.3], 0, 0.0, false)).unwrap().is_none());
        }
        assert!(matches!(agent.update(), Err(AgentError::BufferTooSmall { len: 31, needed: 32 })));
        assert!(agent.observe(transition(vec![0.1, 0.2, 0.3], 0, 0.0, false)).unwrap().is_some());
    }

    #[test]
    fn terminal_zero_reward_batch_has_zero_loss() {
        let mut agent = zero_agent(DqnConfig::default());
        for i in 0..40 {
            agent.replay.push(ReplayEntry {
                features: vec![i as f64, 1.0, -1.0],
                action: ActionId(i % 2),
                reward: 0.0,
                next_features: vec![0.0; 3],
                next_legal: LegalMask::all(2),
                done: true,
            });
        }
        assert_eq!(agent.update().unwrap(), 0.0);
    }

    #[test]
    fn single_transition_loss_matches_hand_computation() {
        let config = DqnConfig { batch_size: 1, buffer_capacity: 1, gamma: 0.9, ..DqnConfig::default() };
        let mut agent = DqnAgent::new(config, 3, 2, 5);
        let t = transition(vec![0.3, -0.2, 0.5], 1, 0.7, false);
        let q = agent.q_values(&t.features)[1];
        let q_next = agent.target_net().forward(&t.next_features).unwrap();
        let expected = (0.7 + 0.9 * q_next[0].max(q_next[1]) - q).powi(2);
        agent.replay.push(ReplayEntry {
            features: t.features,
            action: t.action,
            reward: t.reward,
            next_features: t.next_features,
            next_legal: t.next_legal,
            done: false,
        });
        assert!((agent.update().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn fixed_terminal_transition_converges_to_reward() {
        let config = DqnConfig { batch_size: 1, buffer_capacity: 1, learning_rate: 1e-3, ..DqnConfig::default() };
        let mut agent = DqnAgent::new(config, 3, 2, 1);
        let features = vec![0.5, -0.5, 1.0];
        agent.replay.push(ReplayEntry {
            features: features.clone(),
            action: ActionId(1),
            reward: 0.8,
            next_features: vec![0.0; 3],
            next_legal: LegalMask::all(2),
            done: true,
        });
        for _ in 0..3000 {
            agent.update().unwrap();
        }
        assert!((agent.q_values(&features)[1] - 0.8).abs() < 1e-2);
    }

    #[test]
    fn target_network_syncs_every_hundred_updates() {
        let mut agent = DqnAgent::new(DqnConfig { batch_size: 1, ..DqnConfig::default() }, 3, 2, 2);
        agent.observe(transition(vec![0.1, 0.2, 0.3], 0, 1.0, false)).unwrap();
        for _ in 1..99 {
            agent.update().unwrap();
        }
        assert_ne!(agent.target_net().params(), agent.q_net().params());
        agent.update().unwrap();
        assert_eq!(agent.updates(), 100);
        assert_eq!(agent.target_net().params(), agent.q_net().params());
    }

    #[test]
    fn epsilon_decays_linearly() {
        let mut agent = DqnAgent::new(DqnConfig { epsilon_decay_steps: 100, batch_size: 1000, ..DqnConfig::default() }, 3, 2, 0);
        assert_eq!(agent.epsilon(), 1.0);
        for _ in 0..50 {
            agent.observe(transition(vec![0.0; 3], 0, 0.0, false)).unwrap();
        }
        assert!((agent.epsilon() - 0.525).abs() < 1e-12);
        for _ in 0..100 {
            agent.observe(transition(vec![0.0; 3], 0, 0.0, false)).unwrap();
        }
        assert_eq!(agent.epsilon(), 0.05);
    }

    #[test]
    fn greedy_choice_respects_the_mask() {
        assert_eq!(masked_argmax(&[5.0, 1.0, 2.0], LegalMask::empty().with(ActionId(1)).with(ActionId(2))), ActionId(2));
        let mut agent = DqnAgent::new(DqnConfig::default(), 3, 4, 0);
        let legal = LegalMask::empty().with(ActionId(3));
        for _ in 0..50 {
            assert_eq!(agent.act(&[0.1, 0.2, 0.3], legal, false).action, ActionId(3));
        }
    }

    proptest! {
        #[test]
        fn replay_never_exceeds_capacity(capacity in 1usize..50, pushes in 0usize..200) {
            let mut buffer = ReplayBuffer::new(capacity);
            for i in 0..pushes {
                buffer.push(ReplayEntry {
                    features: vec![i as f64],
                    action: ActionId(0),
                    reward: 0.0,
                    next_features: vec![0.0],
                    next_legal: LegalMask::all(1),
                    done: false,
                });
                prop_assert!(buffer.len() <= capacity);
            }
            prop_assert_eq!(buffer.len(), pushes.min(capacity));
            if pushes > 0 {
                let newest = buffer.entries().iter().map(|e| e.features[0] as usize).max().unwrap();
                prop_assert_eq!(newest, pushes - 1);
            }
        }
    }
}
