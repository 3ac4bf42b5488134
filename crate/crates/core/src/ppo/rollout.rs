//! Rollout storage, Monte Carlo returns and advantage estimates.

use rand::Rng;
use setrl_highway::Action;

use super::env::Environment;
use crate::encoders::{featurize, Features, NetInput, Network, STATIC_DIM};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub features: Features,
    pub statics: [f32; STATIC_DIM],
    /// Sampled action, before the environment's safety check.
    pub action: usize,
    /// Log-probability of `action` under the collecting policy.
    pub log_prob: f64,
    pub reward: f64,
}

/// Steps grouped by episode. Returns are cut into segments of `horizon`
/// steps counted from the start of each episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    horizon: usize,
    episodes: Vec<Vec<RolloutStep>>,
}

impl RolloutBuffer {
    pub fn new(horizon: usize) -> Self {
        Self { horizon: horizon.max(1), episodes: Vec::new() }
    }

    pub fn push_episode(&mut self, steps: Vec<RolloutStep>) {
        self.episodes.push(steps);
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn episodes(&self) -> &[Vec<RolloutStep>] {
        &self.episodes
    }

    pub fn len(&self) -> usize {
        self.episodes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All steps in episode order.
    pub fn steps(&self) -> impl Iterator<Item = &RolloutStep> {
        self.episodes.iter().flatten()
    }

    /// Undiscounted return of each episode.
    pub fn episode_returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.iter().map(|s| s.reward).sum()).collect()
    }

    /// Discounted reward-to-go up to the end of each step's horizon segment.
    pub fn returns(&self, gamma: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for ep in &self.episodes {
            let mut seg = vec![0.0; ep.len()];
            for start in (0..ep.len()).step_by(self.horizon) {
                let end = (start + self.horizon).min(ep.len());
                let mut acc = 0.0;
                for t in (start..end).rev() {
                    acc = ep[t].reward + gamma * acc;
                    seg[t] = acc;
                }
            }
            out.extend(seg);
        }
        out
    }

    pub fn input(&self, indices: &[usize]) -> Result<NetInput<f32>> {
        let steps: Vec<&RolloutStep> = self.steps().collect();
        let parts: Vec<(&Features, [f32; STATIC_DIM])> =
            indices.iter().map(|&i| (&steps[i].features, steps[i].statics)).collect();
        NetInput::from_parts(&parts)
    }
}

/// Numerically stable log-softmax of one row of logits.
pub fn log_softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lse = max + logits.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&v| v as f64 - lse).collect()
}

/// Draws an index from `exp(log_probs)` by inverse CDF.
pub fn sample_index(log_probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    log_probs.len() - 1
}

/// Runs the policy for `episodes` episodes, sampling actions from its
/// softmax. `make_env(i)` builds the environment of episode `i`.
pub fn collect_rollout<E: Environment>(
    policy: &Network<f32>,
    mut make_env: impl FnMut(usize) -> Result<E>,
    episodes: usize,
    horizon: usize,
    rng: &mut impl Rng,
) -> Result<RolloutBuffer> {
    let kind = policy.kind();
    let mut buffer = RolloutBuffer::new(horizon);
    for i in 0..episodes {
        let mut env = make_env(i)?;
        let mut steps = Vec::new();
        while !env.done() {
            let obs = env.observe();
            let features = featurize(kind, &obs);
            let statics = obs.static_features.as_input();
            let logits = policy.forward(&NetInput::from_parts(&[(&features, statics)])?)?;
            let log_probs = log_softmax(logits.data());
            let action = sample_index(&log_probs, rng);
            let reward = env.step(Action::from_index(action).expect("three actions"));
            steps.push(RolloutStep { features, statics, action, log_prob: log_probs[action], reward });
        }
        buffer.push_episode(steps);
    }
    Ok(buffer)
}

/// Value predictions for every step of the buffer.
pub fn state_values(value_net: &Network<f32>, buffer: &RolloutBuffer) -> Result<Vec<f64>> {
    let n = buffer.len();
    let mut values = Vec::with_capacity(n);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(256) {
        let v = value_net.forward(&buffer.input(chunk)?)?;
        values.extend(v.data().iter().map(|&x| x as f64));
    }
    Ok(values)
}

/// `A_t = R_t - V(s_t)`, optionally shifted and scaled to zero mean and
/// unit variance. A constant advantage vector is only centred.
pub fn advantages(returns: &[f64], values: &[f64], normalize: bool) -> Vec<f64> {
    let mut adv: Vec<f64> = returns.iter().zip(values).map(|(r, v)| r - v).collect();
    if normalize && !adv.is_empty() {
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let scale = if var.sqrt() > 1e-8 { 1.0 / var.sqrt() } else { 1.0 };
        for a in &mut adv {
            *a = (*a - mean) * scale;
        }
    }
    adv
}

/// Returns and advantages for one update.
pub fn compute_advantages(
    buffer: &RolloutBuffer,
    value_net: &Network<f32>,
    gamma: f64,
    normalize: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let returns = buffer.returns(gamma);
    let values = state_values(value_net, buffer)?;
    let adv = advantages(&returns, &values, normalize);
    Ok((returns, adv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn episode(rewards: &[f64]) -> Vec<RolloutStep> {
        rewards
            .iter()
            .map(|&reward| RolloutStep {
                features: Features::Set(Vec::new()),
                statics: [1.0, 0.0, 0.0],
                action: 0,
                log_prob: (1.0f64 / 3.0).ln(),
                reward,
            })
            .collect()
    }

    #[test]
    fn constant_reward_return_is_geometric_sum() {
        let mut b = RolloutBuffer::new(20);
        b.push_episode(episode(&[1.0; 45]));
        let r = b.returns(0.9);
        assert!((r[0] - (1.0 - 0.9f64.powi(20)) / 0.1).abs() < 1e-12);
        assert!((r[0] - 8.7842).abs() < 1e-4);
        // segment boundaries restart the sum
        assert!((r[19] - 1.0).abs() < 1e-12);
        assert!((r[20] - r[0]).abs() < 1e-12);
        assert!((r[44] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_discount_advantage_is_reward_minus_value() {
        let mut b = RolloutBuffer::new(20);
        b.push_episode(episode(&[0.5, -1.0, 2.0]));
        let values = [0.25, 0.0, 1.0];
        let adv = advantages(&b.returns(0.0), &values, false);
        assert_eq!(adv, vec![0.25, -1.0, 1.0]);
    }

    #[test]
    fn perfect_value_gives_zero_advantage() {
        let mut b = RolloutBuffer::new(5);
        b.push_episode(episode(&[1.0, 0.0, 3.0, 2.0, 1.0, 1.0, 0.5]));
        let r = b.returns(0.9);
        assert!(advantages(&r, &r, false).iter().all(|a| *a == 0.0));
        assert!(advantages(&r, &r, true).iter().all(|a| *a == 0.0));
    }

    #[test]
    fn normalized_advantages_have_unit_moments() {
        let adv = advantages(&[1.0, 2.0, 5.0, -3.0], &[0.0; 4], true);
        let mean = adv.iter().sum::<f64>() / 4.0;
        let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_normalizes() {
        let lp = log_softmax(&[2.0, -1.0, 0.5]);
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(log_softmax(&[0.0; 3]).iter().all(|v| (v - (1.0f64 / 3.0).ln()).abs() < 1e-12));
    }
}
