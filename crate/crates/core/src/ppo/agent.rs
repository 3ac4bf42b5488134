//! Clipped-surrogate policy optimization with a separate value network.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use setrl_highway::{Action, Observation, ScenarioConfig, Simulator};
use setrl_nn::{Adam, AdamConfig, Checkpoint, Module, ParameterSet, Tensor};

use super::env::Environment;
use super::rollout::{collect_rollout, compute_advantages, log_softmax, RolloutBuffer};
use crate::encoders::{EncoderKind, NetConfig, NetInput, Network};
use crate::error::{CoreError, Result};
use crate::qlearning::argmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub clip: f64,
    pub lr: f64,
    pub batch: usize,
    /// Passes over each rollout.
    pub epochs: usize,
    /// Episodes collected per update.
    pub episodes: usize,
    /// Monte Carlo horizon.
    pub horizon: usize,
    pub normalize_advantages: bool,
    /// Environment step budget.
    pub steps: usize,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            clip: 0.2,
            lr: 5e-4,
            batch: 64,
            epochs: 4,
            episodes: 8,
            horizon: 20,
            normalize_advantages: true,
            steps: 100_000,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(CoreError::Config(format!("clip {} outside (0, 1)", self.clip)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(CoreError::Config(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if self.lr <= 0.0 || self.batch == 0 || self.epochs == 0 || self.episodes == 0 || self.horizon == 0 {
            return Err(CoreError::Config("lr, batch, epochs, episodes and horizon must be positive".into()));
        }
        Ok(())
    }
}

/// `min(r A, clip(r, 1-eps, 1+eps) A)` and its derivative in `r`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, advantage)
    } else {
        (clipped, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateMetrics {
    /// Negated mean surrogate over all minibatches.
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Share of samples whose ratio left the clip band.
    pub clip_fraction: f64,
    pub mean_episode_return: f64,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub struct PpoAgent {
    pub policy: Network<f32>,
    pub value: Network<f32>,
    policy_opt: Adam<f32>,
    value_opt: Adam<f32>,
    config: PpoConfig,
    rng: ChaCha8Rng,
    updates: u64,
    env_steps: u64,
}

/// Value network layout: the policy layout with a scalar output.
pub fn value_config(policy: &NetConfig) -> NetConfig {
    NetConfig { outputs: 1, ..policy.clone() }
}

impl PpoAgent {
    pub fn new(policy: &NetConfig, config: PpoConfig) -> Result<Self> {
        config.validate()?;
        if policy.outputs != Action::ALL.len() {
            return Err(CoreError::Dimension(format!("policy needs {} outputs", Action::ALL.len())));
        }
        let stream = |s| {
            let mut r = ChaCha8Rng::seed_from_u64(config.seed);
            r.set_stream(s);
            r
        };
        let pi = Network::new(policy, &mut stream(1))?;
        let v = Network::new(&value_config(policy), &mut stream(2))?;
        let adam = Adam::new(AdamConfig::with_lr(config.lr));
        Ok(Self {
            policy: pi,
            value: v,
            policy_opt: adam.clone(),
            value_opt: adam,
            rng: stream(3),
            config,
            updates: 0,
            env_steps: 0,
        })
    }

    pub fn config(&self) -> &PpoConfig {
        &self.config
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn kind(&self) -> EncoderKind {
        self.policy.kind()
    }

    /// Action probabilities for one observation.
    pub fn probabilities(&self, obs: &Observation) -> Result<Vec<f64>> {
        let logits = self.policy.evaluate(obs)?;
        Ok(log_softmax(&logits).into_iter().map(f64::exp).collect())
    }

    pub fn greedy_action(&self, obs: &Observation) -> Result<Action> {
        Ok(Action::from_index(argmax(&self.policy.evaluate(obs)?)).expect("three actions"))
    }

    /// Runs the current policy (acting as the old policy) for the configured
    /// number of episodes.
    pub fn collect<E: Environment>(&mut self, make_env: impl FnMut(usize) -> Result<E>) -> Result<RolloutBuffer> {
        let buf = collect_rollout(&self.policy, make_env, self.config.episodes, self.config.horizon, &mut self.rng)?;
        self.env_steps += buf.len() as u64;
        Ok(buf)
    }

    /// Several epochs of minibatch updates on one rollout. Each minibatch
    /// fits the value network to the returns and then takes one ascent step
    /// on the clipped surrogate.
    pub fn update(&mut self, buffer: &RolloutBuffer) -> Result<UpdateMetrics> {
        let n = buffer.len();
        let mut m = UpdateMetrics {
            policy_loss: 0.0,
            value_loss: 0.0,
            clip_fraction: 0.0,
            mean_episode_return: mean(&buffer.episode_returns()),
            samples: n,
        };
        if n == 0 {
            return Ok(m);
        }
        let (returns, adv) = compute_advantages(buffer, &self.value, self.config.gamma, self.config.normalize_advantages)?;
        let old: Vec<(usize, f64)> = buffer.steps().map(|s| (s.action, s.log_prob)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        let (mut batches, mut clipped) = (0usize, 0usize);
        for _ in 0..self.config.epochs {
            order.shuffle(&mut self.rng);
            for idx in order.chunks(self.config.batch) {
                let input = buffer.input(idx)?;
                let rets: Vec<f64> = idx.iter().map(|&i| returns[i]).collect();
                m.value_loss += self.value_step(&input, &rets)?;
                let samples: Vec<(usize, f64, f64)> = idx.iter().map(|&i| (old[i].0, old[i].1, adv[i])).collect();
                let (loss, c) = self.policy_step(&input, &samples)?;
                m.policy_loss += loss;
                clipped += c;
                batches += 1;
            }
        }
        m.policy_loss /= batches as f64;
        m.value_loss /= batches as f64;
        m.clip_fraction = clipped as f64 / (n * self.config.epochs) as f64;
        self.updates += 1;
        Ok(m)
    }

    fn value_step(&mut self, input: &NetInput<f32>, returns: &[f64]) -> Result<f64> {
        let b = returns.len();
        let (v, cache) = self.value.forward_train(input)?;
        let mut loss = 0.0;
        let grad: Vec<f32> = v
            .data()
            .iter()
            .zip(returns)
            .map(|(&p, &r)| {
                let d = p as f64 - r;
                loss += d * d;
                (2.0 * d / b as f64) as f32
            })
            .collect();
        let g = self.value.backward(&cache, &Tensor::new(vec![b, 1], grad)?)?;
        self.value_opt.step_module(&mut self.value, &g)?;
        Ok(loss / b as f64)
    }

    /// Returns the minibatch loss and the number of clipped samples.
    fn policy_step(&mut self, input: &NetInput<f32>, samples: &[(usize, f64, f64)]) -> Result<(f64, usize)> {
        let (loss, clipped, grads) = surrogate_gradient(&self.policy, input, samples, self.config.clip)?;
        self.policy_opt.step_module(&mut self.policy, &grads)?;
        Ok((loss, clipped))
    }

    /// Policy and value networks under `policy.` and `value.`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let desc = PpoDescriptor {
            algo: "ppo".into(),
            policy: self.policy.config().clone(),
            value: self.value.config().clone(),
            train: self.config.clone(),
            updates: self.updates,
            env_steps: self.env_steps,
        };
        let mut params = ParameterSet::new();
        params.extend_prefixed("policy.", self.policy.parameters());
        params.extend_prefixed("value.", self.value.parameters());
        Checkpoint::new(serde_json::to_string(&desc).expect("descriptor"), params)
    }

    /// Optimizer moments and the sampling stream restart from the seed.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let desc: PpoDescriptor = serde_json::from_str(&ckpt.descriptor)
            .map_err(|e| CoreError::Config(format!("not a PPO checkpoint: {e}")))?;
        if desc.algo != "ppo" {
            return Err(CoreError::Config(format!("checkpoint algo {:?} is not ppo", desc.algo)));
        }
        let mut agent = PpoAgent::new(&desc.policy, desc.train)?;
        for (prefix, net) in [("policy.", &mut agent.policy), ("value.", &mut agent.value)] {
            let mut part = ParameterSet::new();
            for (name, t) in ckpt.params.iter() {
                if let Some(rest) = name.strip_prefix(prefix) {
                    part.push(rest, t.clone());
                }
            }
            net.load_parameters(&part)?;
        }
        agent.updates = desc.updates;
        agent.env_steps = desc.env_steps;
        Ok(agent)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Negated mean clipped surrogate of `(action, old log-prob, advantage)`
/// samples, the number of samples outside the clip band and the policy
/// gradient of the loss.
pub fn surrogate_gradient(
    policy: &Network<f32>,
    input: &NetInput<f32>,
    samples: &[(usize, f64, f64)],
    eps: f64,
) -> Result<(f64, usize, ParameterSet<f32>)> {
    let b = samples.len();
    let (logits, cache) = policy.forward_train(input)?;
    let width = logits.row_len();
    let mut grad = vec![0f32; b * width];
    let (mut loss, mut clipped) = (0.0, 0usize);
    for (i, &(a, old_lp, adv)) in samples.iter().enumerate() {
        let lp = log_softmax(logits.row(i));
        let ratio = (lp[a] - old_lp).exp();
        let (s, ds) = clipped_surrogate(ratio, adv, eps);
        loss -= s / b as f64;
        clipped += ((ratio - 1.0).abs() > eps) as usize;
        // d(log p_a)/d(logit_j) = [j = a] - p_j
        let scale = -ds * ratio / b as f64;
        for j in 0..width {
            let onehot = (j == a) as u8 as f64;
            grad[i * width + j] = (scale * (onehot - lp[j].exp())) as f32;
        }
    }
    let grads = policy.backward(&cache, &Tensor::new(vec![b, width], grad)?)?;
    Ok((loss, clipped, grads))
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Header of PPO checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoDescriptor {
    pub algo: String,
    pub policy: NetConfig,
    pub value: NetConfig,
    pub train: PpoConfig,
    pub updates: u64,
    pub env_steps: u64,
}

/// Training scenarios: `n ~ U{min..=max}`, each episode seeded from its index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HighwayEpisodes {
    pub seed: u64,
    pub min_vehicles: usize,
    pub max_vehicles: usize,
    pub lanes: usize,
    pub episode_actions: usize,
    pub driver_pool_seed: u64,
}

impl Default for HighwayEpisodes {
    fn default() -> Self {
        Self {
            seed: 0,
            min_vehicles: 30,
            max_vehicles: 60,
            lanes: 3,
            episode_actions: setrl_highway::params::DEFAULT_EPISODE_ACTIONS,
            driver_pool_seed: 0,
        }
    }
}

impl HighwayEpisodes {
    pub fn scenario(&self, episode: u64) -> ScenarioConfig {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(episode);
        ScenarioConfig {
            vehicles: rng.random_range(self.min_vehicles..=self.max_vehicles),
            lanes: self.lanes,
            seed: rng.random(),
            episode_actions: self.episode_actions,
            driver_pool_seed: self.driver_pool_seed,
        }
    }

    pub fn spawn(&self, episode: u64) -> Result<Simulator> {
        Ok(Simulator::spawn(self.scenario(episode))?)
    }
}

pub const PPO_METRICS_HEADER: &str = "update,env_steps,policy_loss,value_loss,mean_episode_return,clip_fraction";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoMetricsRow {
    pub update: u64,
    pub env_steps: u64,
    pub metrics: UpdateMetrics,
    pub wall_time_s: f64,
}

impl PpoMetricsRow {
    /// One CSV line; the wall-time column only when `wall_time` is set.
    pub fn csv(&self, wall_time: bool) -> String {
        let m = &self.metrics;
        let line = format!(
            "{},{},{},{},{},{}",
            self.update, self.env_steps, m.policy_loss, m.value_loss, m.mean_episode_return, m.clip_fraction
        );
        if wall_time {
            format!("{line},{:.3}", self.wall_time_s)
        } else {
            line
        }
    }
}

#[derive(Default)]
pub struct PpoOutputs<'a> {
    pub metrics: Option<&'a mut dyn Write>,
    /// Checkpoint written after every `every` updates as `update_<n>.ckpt`.
    pub checkpoint_dir: Option<(PathBuf, u64)>,
    /// Appends a `wall_time_s` column, which makes the file differ between reruns.
    pub wall_time: bool,
}

/// Alternates rollouts and updates until the step budget is spent.
/// `make_env(k)` builds the `k`-th episode over the whole run.
pub fn train_ppo<E: Environment>(
    agent: &mut PpoAgent,
    mut make_env: impl FnMut(u64) -> Result<E>,
    mut outputs: PpoOutputs<'_>,
) -> Result<Vec<PpoMetricsRow>> {
    if let Some(w) = outputs.metrics.as_deref_mut() {
        let extra = if outputs.wall_time { ",wall_time_s" } else { "" };
        writeln!(w, "{PPO_METRICS_HEADER}{extra}")?;
    }
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut episode = 0u64;
    while agent.env_steps() < agent.config().steps as u64 {
        let buf = agent.collect(|_| {
            episode += 1;
            make_env(episode - 1)
        })?;
        if buf.is_empty() {
            return Err(CoreError::Config("environment produced empty episodes".into()));
        }
        let metrics = agent.update(&buf)?;
        if !(metrics.policy_loss.is_finite() && metrics.value_loss.is_finite()) {
            return Err(CoreError::Config(format!("loss diverged at update {}", agent.updates())));
        }
        let row = PpoMetricsRow {
            update: agent.updates(),
            env_steps: agent.env_steps(),
            metrics,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        if let Some(w) = outputs.metrics.as_deref_mut() {
            writeln!(w, "{}", row.csv(outputs.wall_time))?;
        }
        rows.push(row);
        if let Some((dir, every)) = &outputs.checkpoint_dir {
            if *every > 0 && agent.updates().is_multiple_of(*every) {
                std::fs::create_dir_all(dir)?;
                agent.save(dir.join(format!("update_{}.ckpt", agent.updates())))?;
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_one_gives_advantage() {
        assert_eq!(clipped_surrogate(1.0, 0.7, 0.2), (0.7, 0.7));
        assert_eq!(clipped_surrogate(1.0, -2.0, 0.2), (-2.0, -2.0));
    }

    #[test]
    fn high_ratio_positive_advantage_is_capped() {
        let (s, ds) = clipped_surrogate(1.5, 2.0, 0.2);
        assert!((s - 1.2 * 2.0).abs() < 1e-12);
        assert_eq!(ds, 0.0);
    }

    #[test]
    fn low_ratio_negative_advantage_is_capped() {
        let (s, ds) = clipped_surrogate(0.5, -1.0, 0.2);
        assert!((s - 0.8 * -1.0).abs() < 1e-12);
        assert_eq!(ds, 0.0);
    }

    #[test]
    fn pessimistic_side_keeps_gradient() {
        // moving the ratio back toward the band is never clipped
        assert_eq!(clipped_surrogate(1.5, -1.0, 0.2), (-1.5, -1.0));
        assert_eq!(clipped_surrogate(0.5, 1.0, 0.2), (0.5, 1.0));
    }

    #[test]
    fn config_rejects_bad_clip() {
        assert!(PpoConfig { clip: 1.0, ..Default::default() }.validate().is_err());
        assert!(PpoConfig { clip: 0.0, ..Default::default() }.validate().is_err());
        assert!(PpoConfig::default().validate().is_ok());
    }
}
