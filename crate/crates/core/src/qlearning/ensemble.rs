//! Clipped double-Q ensemble: two online networks and their Polyak-averaged
//! target copies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use setrl_highway::{Action, Observation};
use setrl_nn::{soft_update_module, Adam, AdamConfig, Module, ParameterSet, Scalar, Tensor};

use super::buffer::{Minibatch, ReplayBuffer};
use crate::encoders::{NetConfig, NetInput, Network};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr: f64,
    pub tau: f64,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    /// Metrics row interval in steps.
    pub log_every: usize,
    /// Checkpoint interval in steps; 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lr: 1e-4,
            tau: 1e-4,
            batch: 64,
            steps: 200_000,
            seed: 0,
            log_every: 100,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(CoreError::Config(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(CoreError::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.lr <= 0.0 || self.batch == 0 {
            return Err(CoreError::Config("lr and batch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    /// Squared TD error summed over both online networks.
    pub loss: f64,
    pub mean_target: f64,
}

#[derive(Debug, Clone)]
pub struct QEnsemble<T = f32> {
    pub online: [Network<T>; 2],
    pub target: [Network<T>; 2],
    optimizers: [Adam<T>; 2],
    config: TrainConfig,
}

impl<T: Scalar> QEnsemble<T> {
    /// Online networks come from independent streams of `config.seed`;
    /// targets start as exact copies.
    pub fn new(net: &NetConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng1 = ChaCha8Rng::seed_from_u64(config.seed);
        rng1.set_stream(1);
        let mut rng2 = ChaCha8Rng::seed_from_u64(config.seed);
        rng2.set_stream(2);
        let q1: Network<T> = Network::<f32>::new(net, &mut rng1)?.cast();
        let q2: Network<T> = Network::<f32>::new(net, &mut rng2)?.cast();
        Ok(Self::from_networks([q1, q2], config))
    }

    pub fn from_networks(online: [Network<T>; 2], config: TrainConfig) -> Self {
        let adam = Adam::new(AdamConfig::with_lr(config.lr));
        Self {
            target: online.clone(),
            online,
            optimizers: [adam.clone(), adam],
            config,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn net_config(&self) -> &NetConfig {
        self.online[0].config()
    }

    pub fn gradient_steps(&self) -> u64 {
        self.optimizers[0].steps()
    }

    /// `y_i = r_i + gamma * max_a min(Q'1(s', a), Q'2(s', a))`. Target
    /// networks only run forward, so nothing flows back into them.
    pub fn compute_targets(&self, batch: &Minibatch<T>) -> Result<Vec<T>> {
        let q1 = self.target[0].forward(&batch.next_states)?;
        let q2 = self.target[1].forward(&batch.next_states)?;
        Ok(clipped_double_targets(&q1, &q2, &batch.rewards, T::of(self.config.gamma)))
    }

    /// Mean squared TD error of each online network on the taken actions.
    /// Returns the summed loss and one gradient set per network.
    pub fn td_loss(&self, states: &NetInput<T>, actions: &[usize], targets: &[T]) -> Result<(f64, [ParameterSet<T>; 2])> {
        let (l1, g1) = td_loss_single(&self.online[0], states, actions, targets)?;
        let (l2, g2) = td_loss_single(&self.online[1], states, actions, targets)?;
        Ok((l1 + l2, [g1, g2]))
    }

    /// One Adam step on both online networks followed by the soft target update.
    pub fn update(&mut self, batch: &Minibatch<T>) -> Result<StepMetrics> {
        let targets = self.compute_targets(batch)?;
        let (loss, grads) = self.td_loss(&batch.states, &batch.actions, &targets)?;
        for ((net, opt), g) in self.online.iter_mut().zip(&mut self.optimizers).zip(&grads) {
            opt.step_module(net, g)?;
        }
        let tau = self.config.tau;
        for (t, o) in self.target.iter_mut().zip(&self.online) {
            soft_update_module(t, &o.parameters(), tau)?;
        }
        let mean_target = targets.iter().map(|v| v.as_f64()).sum::<f64>() / targets.len() as f64;
        Ok(StepMetrics { loss, mean_target })
    }

    pub fn train_step(&mut self, buffer: &mut ReplayBuffer) -> Result<StepMetrics> {
        let batch = buffer.sample(self.config.batch)?;
        self.update(&batch)
    }

    /// Mean of the two online networks' Q-values.
    pub fn q_values(&self, input: &NetInput<T>) -> Result<Tensor<T>> {
        let mut q = self.online[0].forward(input)?;
        let q2 = self.online[1].forward(input)?;
        let half = T::of(0.5);
        for (a, b) in q.data_mut().iter_mut().zip(q2.data()) {
            *a = (*a + *b) * half;
        }
        Ok(q)
    }

    pub fn greedy_action(&self, obs: &Observation) -> Result<Action> {
        let input = NetInput::from_observations(self.online[0].kind(), &[obs])?;
        let q = self.q_values(&input)?;
        Ok(Action::from_index(argmax(q.data())).expect("three outputs"))
    }
}

/// First index of the maximum, so ties go to keep, then left, then right.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Target values from two `[batch x actions]` next-state Q tables.
pub fn clipped_double_targets<T: Scalar>(q1: &Tensor<T>, q2: &Tensor<T>, rewards: &[T], gamma: T) -> Vec<T> {
    (0..q1.rows())
        .map(|i| {
            let best = q1
                .row(i)
                .iter()
                .zip(q2.row(i))
                .map(|(a, b)| a.min(*b))
                .fold(T::neg_infinity(), T::max);
            rewards[i] + gamma * best
        })
        .collect()
}

fn td_loss_single<T: Scalar>(
    net: &Network<T>,
    states: &NetInput<T>,
    actions: &[usize],
    targets: &[T],
) -> Result<(f64, ParameterSet<T>)> {
    let b = actions.len();
    if targets.len() != b || states.batch() != b {
        return Err(CoreError::Dimension(format!(
            "batch of {} states, {b} actions, {} targets",
            states.batch(),
            targets.len()
        )));
    }
    let (q, cache) = net.forward_train(states)?;
    let width = q.row_len();
    let mut grad = vec![T::zero(); b * width];
    let mut loss = 0.0;
    let scale = T::of(2.0 / b as f64);
    for i in 0..b {
        let a = actions[i];
        let d = q.row(i)[a] - targets[i];
        loss += d.as_f64() * d.as_f64();
        grad[i * width + a] = scale * d;
    }
    let grads = net.backward(&cache, &Tensor::new(vec![b, width], grad)?)?;
    Ok((loss / b as f64, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_clipped_target() {
        let q1 = Tensor::new(vec![1, 3], vec![1.0f64, 2.0, 3.0]).unwrap();
        let q2 = Tensor::new(vec![1, 3], vec![2.0f64, 1.0, 2.0]).unwrap();
        let y = clipped_double_targets(&q1, &q2, &[1.0], 0.99);
        assert!((y[0] - 2.98).abs() < 1e-12);
    }

    #[test]
    fn zero_discount_target_is_reward() {
        let q = Tensor::new(vec![2, 3], vec![5.0f32, -1.0, 3.0, 0.5, 0.2, 9.0]).unwrap();
        assert_eq!(clipped_double_targets(&q, &q, &[0.25, -0.5], 0.0), vec![0.25, -0.5]);
    }

    #[test]
    fn identical_targets_reduce_to_dqn() {
        let q = Tensor::new(vec![1, 3], vec![0.5f64, 1.5, -2.0]).unwrap();
        let y = clipped_double_targets(&q, &q, &[0.1], 0.9);
        assert!((y[0] - (0.1 + 0.9 * 1.5)).abs() < 1e-12);
    }

    #[test]
    fn argmax_tie_break() {
        assert_eq!(argmax(&[1.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 1.0, 0.0]), 0);
        assert_eq!(argmax(&[0.0, 1.0, 1.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0, 2.0]), 2);
    }

    #[test]
    fn invalid_gamma_rejected() {
        let cfg = TrainConfig {
            gamma: 1.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
