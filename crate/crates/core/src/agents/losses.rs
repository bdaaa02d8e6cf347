//! Loss functions and return estimators, with gradients at the network outputs.

/// `r + gamma * max_next * (1 - done)` per transition.
pub fn td_targets(rewards: &[f64], next_max_q: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    rewards.iter().zip(next_max_q).zip(dones).map(|((&r, &q), &done)| if done { r } else { r + gamma * q }).collect()
}

/// Mean squared error and its gradient with respect to `predictions`.
pub fn mse_with_grad(predictions: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    let n = predictions.len().max(1) as f64;
    let loss = predictions.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    let grad = predictions.iter().zip(targets).map(|(p, t)| 2.0 * (p - t) / n).collect();
    (loss, grad)
}

/// Generalized advantage estimates and the matching value targets.
///
/// `next_values[t]` is the critic's estimate for the state reached at step `t`
/// (zero when that state is terminal). `episode_end[t]` stops the recursion
/// at episode boundaries, whether the episode terminated or was truncated.
pub fn gae(rewards: &[f64], values: &[f64], next_values: &[f64], episode_end: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut advantages = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_values[t] - values[t];
        let carry = if episode_end[t] || t + 1 == n { 0.0 } else { running };
        running = delta + gamma * lambda * carry;
        advantages[t] = running;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// Bootstrapped n-step returns over one rollout segment.
pub fn n_step_returns(rewards: &[f64], next_values: &[f64], episode_end: &[bool], gamma: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut returns = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let tail = if episode_end[t] || t + 1 == n { next_values[t] } else { running };
        running = rewards[t] + gamma * tail;
        returns[t] = running;
    }
    returns
}

/// Clipped surrogate `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_range: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_range, 1.0 + clip_range);
    (ratio * advantage).min(clipped * advantage)
}

/// Derivative of [`clipped_surrogate`] with respect to the log-probability.
pub fn clipped_surrogate_grad(ratio: f64, advantage: f64, clip_range: f64) -> f64 {
    let saturated = (advantage > 0.0 && ratio > 1.0 + clip_range) || (advantage < 0.0 && ratio < 1.0 - clip_range);
    if saturated {
        0.0
    } else {
        ratio * advantage
    }
}

/// Log-probability of `action` and the entropy of `probs`, with gradients of
/// both with respect to the logits that produced `probs` by softmax.
pub fn log_prob_and_entropy(probs: &[f64], action: usize) -> (f64, Vec<f64>, f64, Vec<f64>) {
    let log_p = probs[action].max(f64::MIN_POSITIVE).ln();
    let d_log_p = probs.iter().enumerate().map(|(j, &p)| if j == action { 1.0 - p } else { -p }).collect();
    let entropy = -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
    let d_entropy = probs.iter().map(|&p| if p > 0.0 { -p * (p.ln() + entropy) } else { 0.0 }).collect();
    (log_p, d_log_p, entropy, d_entropy)
}

/// One actor sample for the policy losses.
#[derive(Clone, Debug)]
pub struct PolicySample<'a> {
    pub probs: &'a [f64],
    pub action: usize,
    pub advantage: f64,
    /// Log-probability under the policy that collected the sample.
    pub old_log_prob: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PolicyLoss {
    pub policy_loss: f64,
    pub entropy: f64,
}

/// `-mean(surrogate) - ent_coef * mean(entropy)` and the gradient at each sample's logits.
pub fn ppo_policy_loss(samples: &[PolicySample<'_>], clip_range: f64, ent_coef: f64) -> (PolicyLoss, Vec<Vec<f64>>) {
    let n = samples.len().max(1) as f64;
    let mut out = PolicyLoss::default();
    let grads = samples
        .iter()
        .map(|s| {
            let (log_p, d_log_p, entropy, d_entropy) = log_prob_and_entropy(s.probs, s.action);
            let ratio = (log_p - s.old_log_prob).exp();
            out.policy_loss -= clipped_surrogate(ratio, s.advantage, clip_range) / n;
            out.entropy += entropy / n;
            let g = clipped_surrogate_grad(ratio, s.advantage, clip_range);
            d_log_p.iter().zip(&d_entropy).map(|(dl, de)| (-g * dl - ent_coef * de) / n).collect()
        })
        .collect();
    (out, grads)
}

/// `-mean(log_prob * advantage) - ent_coef * mean(entropy)` and its logit gradients.
pub fn a2c_policy_loss(samples: &[PolicySample<'_>], ent_coef: f64) -> (PolicyLoss, Vec<Vec<f64>>) {
    let n = samples.len().max(1) as f64;
    let mut out = PolicyLoss::default();
    let grads = samples
        .iter()
        .map(|s| {
            let (log_p, d_log_p, entropy, d_entropy) = log_prob_and_entropy(s.probs, s.action);
            out.policy_loss -= log_p * s.advantage / n;
            out.entropy += entropy / n;
            d_log_p.iter().zip(&d_entropy).map(|(dl, de)| (-s.advantage * dl - ent_coef * de) / n).collect()
        })
        .collect();
    (out, grads)
}

/// Zero-mean, unit-variance rescaling; left alone for fewer than two samples.
pub fn normalize_advantages(advantages: &mut [f64]) {
    if advantages.len() < 2 {
        return;
    }
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    advantages.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::softmax;
    use proptest::prelude::*;

    #[test]
    fn td_target_hand_computation() {
        // Two-state toy: Q(s1, .) = [0.5, 2.0], r = 1, gamma = 0.9.
        let y = td_targets(&[1.0, 1.0], &[2.0, 2.0], &[false, true], 0.9);
        assert!((y[0] - 2.8).abs() < 1e-12);
        assert_eq!(y[1], 1.0);
        let q_sa = 0.7;
        let (loss, grad) = mse_with_grad(&[q_sa], &[y[0]]);
        assert!((loss - (1.0 + 0.9 * 2.0 - q_sa).powi(2)).abs() < 1e-12);
        assert!((grad[0] - 2.0 * (q_sa - 2.8)).abs() < 1e-12);
    }

    #[test]
    fn zero_targets_zero_loss() {
        let y = td_targets(&[0.0; 4], &[0.0; 4], &[true; 4], 0.99);
        let (loss, grad) = mse_with_grad(&[0.0; 4], &y);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn identical_policy_loss_is_negative_mean_advantage() {
        let probs = softmax(&[0.3, -0.2, 1.1]);
        let advs = [0.5, -1.0, 2.0];
        let samples: Vec<_> =
            advs.iter().enumerate().map(|(i, &a)| PolicySample { probs: &probs, action: i, advantage: a, old_log_prob: probs[i].ln() }).collect();
        let (loss, _) = ppo_policy_loss(&samples, 0.2, 0.0);
        assert!((loss.policy_loss + advs.iter().sum::<f64>() / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_advantage_gives_zero_policy_gradient() {
        let probs = softmax(&[0.3, -0.2, 1.1]);
        let samples = [PolicySample { probs: &probs, action: 1, advantage: 0.0, old_log_prob: -2.0 }];
        for grads in [ppo_policy_loss(&samples, 0.2, 0.0).1, a2c_policy_loss(&samples, 0.0).1] {
            assert!(grads[0].iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn ratio_two_is_clipped() {
        assert_eq!(clipped_surrogate(2.0, 1.5, 0.2), 1.2 * 1.5);
        assert_eq!(clipped_surrogate_grad(2.0, 1.5, 0.2), 0.0);
        assert_eq!(clipped_surrogate(2.0, -1.0, 0.2), -2.0);
        assert_eq!(clipped_surrogate_grad(2.0, -1.0, 0.2), -2.0);
    }

    #[test]
    fn discount_off_returns_immediate_reward() {
        let r = [1.0, -0.5, 2.0];
        assert_eq!(n_step_returns(&r, &[9.0, 9.0, 9.0], &[false, false, false], 0.0), r.to_vec());
    }

    #[test]
    fn two_step_return_by_hand() {
        let (g, r0, r1, v2) = (0.9, 1.0, 2.0, 5.0);
        let ret = n_step_returns(&[r0, r1], &[123.0, v2], &[false, false], g);
        assert!((ret[0] - (r0 + g * r1 + g * g * v2)).abs() < 1e-12);
        assert!((ret[1] - (r1 + g * v2)).abs() < 1e-12);
    }

    #[test]
    fn episode_boundary_stops_bootstrap() {
        let ret = n_step_returns(&[1.0, 1.0], &[0.0, 4.0], &[true, false], 0.5);
        assert_eq!(ret, vec![1.0, 3.0]);
    }

    #[test]
    fn gae_with_unit_lambda_matches_n_step() {
        let r = [0.1, 0.0, -1.0, 0.5, 0.2];
        let v = [0.3, 0.2, -0.1, 0.4, 0.0];
        let nv = [0.2, -0.1, 0.0, 0.0, 0.7];
        let ends = [false, false, true, false, false];
        let (adv, ret) = gae(&r, &v, &nv, &ends, 0.99, 1.0);
        let expected = n_step_returns(&r, &nv, &ends, 0.99);
        for t in 0..5 {
            assert!((ret[t] - expected[t]).abs() < 1e-12);
            assert!((adv[t] - (expected[t] - v[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_zero_lambda_is_one_step_td() {
        let (adv, _) = gae(&[1.0, 2.0], &[0.5, 0.25], &[0.25, 3.0], &[false, false], 0.9, 0.0);
        assert!((adv[0] - (1.0 + 0.9 * 0.25 - 0.5)).abs() < 1e-12);
        assert!((adv[1] - (2.0 + 0.9 * 3.0 - 0.25)).abs() < 1e-12);
    }

    /// Central-difference check of the logit gradients of both policy losses.
    #[test]
    fn policy_gradients_match_finite_differences() {
        let logits = vec![0.4, -0.3, 0.9, 0.1];
        let eval = |z: &[f64], ppo: bool| {
            let p = softmax(z);
            let s = [PolicySample { probs: &p, action: 2, advantage: 0.7, old_log_prob: -1.3 }];
            let (l, g) = if ppo { ppo_policy_loss(&s, 0.2, 0.01) } else { a2c_policy_loss(&s, 0.01) };
            (l.policy_loss - 0.01 * l.entropy, g[0].clone())
        };
        for ppo in [true, false] {
            let (_, grad) = eval(&logits, ppo);
            for j in 0..4 {
                let h = 1e-6;
                let mut up = logits.clone();
                up[j] += h;
                let mut down = logits.clone();
                down[j] -= h;
                let fd = (eval(&up, ppo).0 - eval(&down, ppo).0) / (2.0 * h);
                assert!((fd - grad[j]).abs() < 1e-6, "ppo={ppo} j={j} fd={fd} an={}", grad[j]);
            }
        }
    }

    proptest! {
        #[test]
        fn surrogate_term_is_bounded(ratio in 0.0f64..10.0, adv in -10.0f64..10.0) {
            let term = clipped_surrogate(ratio, adv, 0.2);
            prop_assert!(term <= 1.2 * adv.abs() + 1e-12);
            if adv >= 0.0 || ratio <= 1.2 {
                prop_assert!(term.abs() <= 1.2 * adv.abs() + 1e-12);
            } else {
                prop_assert_eq!(term, ratio * adv);
            }
        }

        #[test]
        fn normalized_advantages_are_standardized(v in proptest::collection::vec(-5.0f64..5.0, 2..40)) {
            let mut a = v.clone();
            normalize_advantages(&mut a);
            let mean = a.iter().sum::<f64>() / a.len() as f64;
            prop_assert!(mean.abs() < 1e-6);
        }
    }
}
