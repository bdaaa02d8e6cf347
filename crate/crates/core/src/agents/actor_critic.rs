use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{a2c_policy_loss, gae, mse_with_grad, normalize_advantages, ppo_policy_loss, PolicySample};
use super::{layer_dims, ActionDecision, Agent, AgentError, Algorithm, DecisionSource, Transition, UpdateSummary, DEFAULT_HIDDEN};
use crate::envs::{ActionId, LegalMask};
use crate::nn::{masked_softmax, Activation, Adam, AdamConfig, Mlp, NnError};

/// One collected step, with the actor's log-probability and critic value at collection time.
#[derive(Clone, Debug)]
pub struct RolloutStep {
    pub features: Vec<f64>,
    pub legal: LegalMask,
    pub action: ActionId,
    pub reward: f64,
    pub next_features: Vec<f64>,
    pub terminated: bool,
    pub truncated: bool,
    pub log_prob: f64,
    pub value: f64,
}

impl RolloutStep {
    fn from_transition(t: Transition, critic: &ActorCritic) -> Self {
        let (log_prob, value) = match (t.log_prob, t.value) {
            (Some(lp), Some(v)) => (lp, v),
            _ => {
                let (lp, v) = critic.log_prob_and_value(&t.features, t.legal, t.action);
                (t.log_prob.unwrap_or(lp), t.value.unwrap_or(v))
            }
        };
        Self {
            features: t.features,
            legal: t.legal,
            action: t.action,
            reward: t.reward,
            next_features: t.next_features,
            terminated: t.terminated,
            truncated: t.truncated,
            log_prob,
            value,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum PolicyObjective {
    Clipped(f64),
    Vanilla,
}

/// Separate actor and critic networks, each with its own Adam optimizer.
pub struct ActorCritic {
    actor: Mlp,
    critic: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
}

impl ActorCritic {
    pub fn new(feature_len: usize, action_count: usize, hidden: &[usize], learning_rate: f64, seed: u64) -> Self {
        let actor = Mlp::new(&layer_dims(feature_len, hidden, action_count), Activation::Relu, seed);
        let critic = Mlp::new(&layer_dims(feature_len, hidden, 1), Activation::Relu, seed.wrapping_add(1));
        let config = AdamConfig::with_learning_rate(learning_rate);
        Self { actor, critic, actor_opt: Adam::new(config), critic_opt: Adam::new(config) }
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn actor_mut(&mut self) -> &mut Mlp {
        &mut self.actor
    }

    pub fn critic_mut(&mut self) -> &mut Mlp {
        &mut self.critic
    }

    /// Action distribution with illegal actions given probability zero.
    pub fn probabilities(&self, features: &[f64], legal: LegalMask) -> Vec<f64> {
        let logits = self.actor.forward(features).expect("feature length matches network input");
        masked_softmax(&logits, |i| legal.contains(ActionId(i)))
    }

    pub fn value(&self, features: &[f64]) -> f64 {
        self.critic.forward(features).expect("feature length matches network input")[0]
    }

    pub fn log_prob_and_value(&self, features: &[f64], legal: LegalMask, action: ActionId) -> (f64, f64) {
        let probs = self.probabilities(features, legal);
        (probs[action.0].max(f64::MIN_POSITIVE).ln(), self.value(features))
    }

    pub fn sample<R: Rng>(&self, features: &[f64], legal: LegalMask, rng: &mut R) -> ActionDecision {
        let probs = self.probabilities(features, legal);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut action = legal.iter().last().unwrap_or(ActionId(0));
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if p > 0.0 && u < acc {
                action = ActionId(i);
                break;
            }
        }
        ActionDecision {
            action,
            source: DecisionSource::Policy,
            log_prob: Some(probs[action.0].max(f64::MIN_POSITIVE).ln()),
            value: Some(self.value(features)),
        }
    }

    fn next_values(&self, steps: &[RolloutStep]) -> Vec<f64> {
        steps.iter().map(|s| if s.terminated { 0.0 } else { self.value(&s.next_features) }).collect()
    }

    /// One gradient step for both networks on `batch`.
    fn gradient_step(
        &mut self,
        batch: &[&RolloutStep],
        advantages: &[f64],
        returns: &[f64],
        objective: PolicyObjective,
        ent_coef: f64,
        vf_coef: f64,
        max_grad_norm: f64,
    ) -> Result<UpdateSummary, NnError> {
        let inputs: Vec<Vec<f64>> = batch.iter().map(|s| s.features.clone()).collect();
        let logits = self.actor.forward_recorded(&inputs)?;
        let probs: Vec<Vec<f64>> = logits.iter().zip(batch).map(|(z, s)| masked_softmax(z, |i| s.legal.contains(ActionId(i)))).collect();
        let samples: Vec<PolicySample<'_>> = batch
            .iter()
            .zip(&probs)
            .zip(advantages)
            .map(|((s, p), &advantage)| PolicySample { probs: p, action: s.action.0, advantage, old_log_prob: s.log_prob })
            .collect();
        let (policy, logit_grads) = match objective {
            PolicyObjective::Clipped(clip) => ppo_policy_loss(&samples, clip, ent_coef),
            PolicyObjective::Vanilla => a2c_policy_loss(&samples, ent_coef),
        };
        let mut actor_grads = self.actor.backward(&logit_grads)?;
        self.actor.clear_trace();
        actor_grads.clip_norm(max_grad_norm);
        self.actor_opt.step(self.actor.params_mut(), &actor_grads)?;

        let values: Vec<f64> = self.critic.forward_recorded(&inputs)?.into_iter().map(|v| v[0]).collect();
        let (value_loss, value_grad) = mse_with_grad(&values, returns);
        let value_grads: Vec<Vec<f64>> = value_grad.iter().map(|g| vec![vf_coef * g]).collect();
        let mut critic_grads = self.critic.backward(&value_grads)?;
        self.critic.clear_trace();
        critic_grads.clip_norm(max_grad_norm);
        self.critic_opt.step(self.critic.params_mut(), &critic_grads)?;

        Ok(UpdateSummary { policy_loss: policy.policy_loss, value_loss, entropy: policy.entropy })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub clip_range: f64,
    /// Minibatch size.
    pub batch_size: usize,
    /// Steps collected per rollout.
    pub n_steps: usize,
    pub n_epochs: usize,
    pub gae_lambda: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantage: bool,
    pub hidden: Vec<usize>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            gamma: 0.99,
            clip_range: 0.2,
            batch_size: 64,
            n_steps: 512,
            n_epochs: 10,
            gae_lambda: 0.95,
            ent_coef: 0.01,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            normalize_advantage: true,
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

pub struct PpoAgent {
    config: PpoConfig,
    model: ActorCritic,
    rollout: Vec<RolloutStep>,
    rng: ChaCha8Rng,
    updates: u64,
}

impl PpoAgent {
    pub fn new(config: PpoConfig, feature_len: usize, action_count: usize, seed: u64) -> Self {
        Self {
            model: ActorCritic::new(feature_len, action_count, &config.hidden, config.learning_rate, seed),
            rollout: Vec::with_capacity(config.n_steps),
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9)),
            updates: 0,
            config,
        }
    }

    pub fn config(&self) -> &PpoConfig {
        &self.config
    }

    pub fn model(&self) -> &ActorCritic {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut ActorCritic {
        &mut self.model
    }

    pub fn rollout(&self) -> &[RolloutStep] {
        &self.rollout
    }

    pub fn push(&mut self, step: RolloutStep) {
        self.rollout.push(step);
    }

    /// Several epochs of clipped-surrogate minibatch updates over the stored rollout, which is then cleared.
    pub fn update(&mut self) -> Result<UpdateSummary, AgentError> {
        if self.rollout.is_empty() {
            return Err(AgentError::EmptyRollout);
        }
        let steps = std::mem::take(&mut self.rollout);
        let c = self.config.clone();
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
        let values: Vec<f64> = steps.iter().map(|s| s.value).collect();
        let ends: Vec<bool> = steps.iter().map(|s| s.terminated || s.truncated).collect();
        let next_values = self.model.next_values(&steps);
        let (advantages, returns) = gae(&rewards, &values, &next_values, &ends, c.gamma, c.gae_lambda);
        let mut order: Vec<usize> = (0..steps.len()).collect();
        let mut total = UpdateSummary::default();
        let mut batches = 0;
        for _ in 0..c.n_epochs.max(1) {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(c.batch_size.max(1)) {
                let batch: Vec<&RolloutStep> = chunk.iter().map(|&i| &steps[i]).collect();
                let mut adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
                if c.normalize_advantage {
                    normalize_advantages(&mut adv);
                }
                let ret: Vec<f64> = chunk.iter().map(|&i| returns[i]).collect();
                let s =
                    self.model.gradient_step(&batch, &adv, &ret, PolicyObjective::Clipped(c.clip_range), c.ent_coef, c.vf_coef, c.max_grad_norm)?;
                total.policy_loss += s.policy_loss;
                total.value_loss += s.value_loss;
                total.entropy += s.entropy;
                batches += 1;
            }
        }
        self.updates += 1;
        let n = batches as f64;
        Ok(UpdateSummary { policy_loss: total.policy_loss / n, value_loss: total.value_loss / n, entropy: total.entropy / n })
    }
}

impl Agent for PpoAgent {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Ppo
    }

    fn act(&mut self, features: &[f64], legal: LegalMask, _tutored: bool) -> ActionDecision {
        self.model.sample(features, legal, &mut self.rng)
    }

    fn evaluate(&self, features: &[f64], legal: LegalMask, action: ActionId) -> (Option<f64>, Option<f64>) {
        let (lp, v) = self.model.log_prob_and_value(features, legal, action);
        (Some(lp), Some(v))
    }

    fn observe(&mut self, t: Transition) -> Result<Option<UpdateSummary>, AgentError> {
        let step = RolloutStep::from_transition(t, &self.model);
        self.rollout.push(step);
        if self.rollout.len() >= self.config.n_steps.max(1) {
            return self.update().map(Some);
        }
        Ok(None)
    }

    fn networks(&self) -> Vec<&Mlp> {
        vec![self.model.actor(), self.model.critic()]
    }

    fn updates(&self) -> u64 {
        self.updates
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct A2cConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub n_steps: usize,
    /// 1.0 gives plain n-step returns.
    pub gae_lambda: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    pub hidden: Vec<usize>,
}

impl Default for A2cConfig {
    fn default() -> Self {
        Self {
            learning_rate: 7e-4,
            gamma: 0.99,
            n_steps: 5,
            gae_lambda: 1.0,
            ent_coef: 0.01,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

pub struct A2cAgent {
    config: A2cConfig,
    model: ActorCritic,
    rollout: Vec<RolloutStep>,
    rng: ChaCha8Rng,
    updates: u64,
}

impl A2cAgent {
    pub fn new(config: A2cConfig, feature_len: usize, action_count: usize, seed: u64) -> Self {
        Self {
            model: ActorCritic::new(feature_len, action_count, &config.hidden, config.learning_rate, seed),
            rollout: Vec::with_capacity(config.n_steps),
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9)),
            updates: 0,
            config,
        }
    }

    pub fn config(&self) -> &A2cConfig {
        &self.config
    }

    pub fn model(&self) -> &ActorCritic {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut ActorCritic {
        &mut self.model
    }

    pub fn rollout(&self) -> &[RolloutStep] {
        &self.rollout
    }

    pub fn push(&mut self, step: RolloutStep) {
        self.rollout.push(step);
    }

    /// Value targets the next update would regress on.
    pub fn returns(&self) -> Vec<f64> {
        let rewards: Vec<f64> = self.rollout.iter().map(|s| s.reward).collect();
        let values: Vec<f64> = self.rollout.iter().map(|s| s.value).collect();
        let ends: Vec<bool> = self.rollout.iter().map(|s| s.terminated || s.truncated).collect();
        let next_values = self.model.next_values(&self.rollout);
        gae(&rewards, &values, &next_values, &ends, self.config.gamma, self.config.gae_lambda).1
    }

    /// One synchronous update on the stored segment, which is then cleared.
    pub fn update(&mut self) -> Result<UpdateSummary, AgentError> {
        if self.rollout.is_empty() {
            return Err(AgentError::EmptyRollout);
        }
        let returns = self.returns();
        let steps = std::mem::take(&mut self.rollout);
        let advantages: Vec<f64> = returns.iter().zip(&steps).map(|(r, s)| r - s.value).collect();
        let batch: Vec<&RolloutStep> = steps.iter().collect();
        let c = &self.config;
        let summary = self.model.gradient_step(&batch, &advantages, &returns, PolicyObjective::Vanilla, c.ent_coef, c.vf_coef, c.max_grad_norm)?;
        self.updates += 1;
        Ok(summary)
    }
}

impl Agent for A2cAgent {
    fn algorithm(&self) -> Algorithm {
        Algorithm::A2c
    }

    fn act(&mut self, features: &[f64], legal: LegalMask, _tutored: bool) -> ActionDecision {
        self.model.sample(features, legal, &mut self.rng)
    }

    fn evaluate(&self, features: &[f64], legal: LegalMask, action: ActionId) -> (Option<f64>, Option<f64>) {
        let (lp, v) = self.model.log_prob_and_value(features, legal, action);
        (Some(lp), Some(v))
    }

    fn observe(&mut self, t: Transition) -> Result<Option<UpdateSummary>, AgentError> {
        let episode_end = t.terminated || t.truncated;
        let step = RolloutStep::from_transition(t, &self.model);
        self.rollout.push(step);
        if episode_end || self.rollout.len() >= self.config.n_steps.max(1) {
            return self.update().map(Some);
        }
        Ok(None)
    }

    fn networks(&self) -> Vec<&Mlp> {
        vec![self.model.actor(), self.model.critic()]
    }

    fn updates(&self) -> u64 {
        self.updates
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(features: Vec<f64>, action: usize, reward: f64, terminated: bool, ac: &ActorCritic) -> RolloutStep {
        let legal = LegalMask::all(3);
        let (log_prob, value) = ac.log_prob_and_value(&features, legal, ActionId(action));
        RolloutStep {
            next_features: features.iter().map(|x| x * 0.5).collect(),
            features,
            legal,
            action: ActionId(action),
            reward,
            terminated,
            truncated: false,
            log_prob,
            value,
        }
    }

    fn transition(features: Vec<f64>, done: bool) -> Transition {
        Transition {
            next_features: features.clone(),
            features,
            legal: LegalMask::all(3),
            action: ActionId(1),
            reward: 1.0,
            next_legal: LegalMask::all(3),
            terminated: done,
            truncated: false,
            log_prob: None,
            value: None,
        }
    }

    #[test]
    fn sampled_log_prob_matches_distribution() {
        let ac = ActorCritic::new(4, 3, &[8], 1e-3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [0.2, -0.4, 0.9, 0.0];
        let legal = LegalMask::empty().with(ActionId(0)).with(ActionId(2));
        let probs = ac.probabilities(&x, legal);
        assert_eq!(probs[1], 0.0);
        for _ in 0..200 {
            let d = ac.sample(&x, legal, &mut rng);
            assert!(legal.contains(d.action));
            assert!((d.log_prob.unwrap().exp() - probs[d.action.0]).abs() < 1e-12);
            assert_eq!(d.value, Some(ac.value(&x)));
        }
    }

    #[test]
    fn empty_rollouts_are_rejected() {
        let mut ppo = PpoAgent::new(PpoConfig::default(), 4, 3, 0);
        assert!(matches!(ppo.update(), Err(AgentError::EmptyRollout)));
        let mut a2c = A2cAgent::new(A2cConfig::default(), 4, 3, 0);
        assert!(matches!(a2c.update(), Err(AgentError::EmptyRollout)));
    }

    #[test]
    fn a2c_updates_every_five_steps_or_at_episode_end() {
        let mut agent = A2cAgent::new(A2cConfig::default(), 2, 3, 0);
        let pattern = [false, false, false, false, false, false, true, false];
        let mut updated_at = Vec::new();
        for (i, &done) in pattern.iter().enumerate() {
            if agent.observe(transition(vec![0.1 * i as f64, 1.0], done)).unwrap().is_some() {
                updated_at.push(i);
            }
        }
        assert_eq!(updated_at, vec![4, 6]);
        assert_eq!(agent.rollout().len(), 1);
    }

    #[test]
    fn a2c_two_step_returns_by_hand() {
        let mut agent = A2cAgent::new(A2cConfig { gamma: 0.9, ..A2cConfig::default() }, 2, 3, 4);
        let mut s0 = step(vec![0.3, 0.1], 0, 1.0, false, agent.model());
        let s1 = step(vec![-0.2, 0.6], 2, 0.5, false, agent.model());
        s0.next_features = s1.features.clone();
        let v2 = agent.model().value(&s1.next_features);
        agent.push(s0);
        agent.push(s1);
        let returns = agent.returns();
        assert!((returns[0] - (1.0 + 0.9 * 0.5 + 0.81 * v2)).abs() < 1e-12);
        assert!((returns[1] - (0.5 + 0.9 * v2)).abs() < 1e-12);
    }

    #[test]
    fn zero_discount_returns_are_rewards() {
        let mut agent = A2cAgent::new(A2cConfig { gamma: 0.0, ..A2cConfig::default() }, 2, 3, 4);
        for (i, r) in [0.25, -1.0, 2.0].iter().enumerate() {
            let s = step(vec![i as f64, 1.0], 0, *r, false, agent.model());
            agent.push(s);
        }
        assert_eq!(agent.returns(), vec![0.25, -1.0, 2.0]);
    }

    #[test]
    fn zero_advantage_leaves_actor_unchanged() {
        let mut ac = ActorCritic::new(2, 3, &[8], 1e-2, 1);
        let s = step(vec![0.5, -0.5], 1, 0.0, true, &ac);
        let before = ac.actor().params().clone();
        ac.gradient_step(&[&s], &[0.0], &[0.0], PolicyObjective::Vanilla, 0.0, 0.5, 0.5).unwrap();
        assert_eq!(ac.actor().params(), &before);
        ac.gradient_step(&[&s], &[0.0], &[0.0], PolicyObjective::Clipped(0.2), 0.0, 0.5, 0.5).unwrap();
        assert_eq!(ac.actor().params(), &before);
    }

    #[test]
    fn ppo_update_increases_advantaged_action_probability() {
        let mut agent = PpoAgent::new(PpoConfig { n_steps: 16, batch_size: 8, normalize_advantage: false, ..PpoConfig::default() }, 2, 3, 2);
        let x = vec![1.0, -1.0];
        let before = agent.model().probabilities(&x, LegalMask::all(3))[2];
        for _ in 0..16 {
            let mut s = step(x.clone(), 2, 1.0, true, agent.model());
            s.value = 0.0;
            agent.push(s);
        }
        agent.update().unwrap();
        assert!(agent.model().probabilities(&x, LegalMask::all(3))[2] > before);
        assert!(agent.rollout().is_empty());
    }
}
