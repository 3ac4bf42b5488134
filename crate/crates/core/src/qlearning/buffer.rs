//! Offline transitions and the uniform replay buffer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use setrl_highway::{Action, Observation};
use setrl_nn::{Scalar, Tensor};

use crate::encoders::{featurize, EncoderKind, Features, NetInput, STATIC_DIM};
use crate::error::{CoreError, Result};

/// One logged decision. There is no terminal flag: the ring road never ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Observation,
    pub action: Action,
    pub reward: f32,
    pub next_state: Observation,
}

/// A transition with encoder inputs precomputed for one encoder kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub state: Features,
    pub state_static: [f32; STATIC_DIM],
    pub action: usize,
    pub reward: f32,
    pub next: Features,
    pub next_static: [f32; STATIC_DIM],
}

impl Sample {
    pub fn from_transition(kind: EncoderKind, t: &Transition) -> Self {
        Self {
            state: featurize(kind, &t.state),
            state_static: t.state.static_features.as_input(),
            action: t.action.index(),
            reward: t.reward,
            next: featurize(kind, &t.next_state),
            next_static: t.next_state.static_features.as_input(),
        }
    }
}

/// Network-ready minibatch.
#[derive(Debug, Clone)]
pub struct Minibatch<T = f32> {
    pub states: NetInput<T>,
    pub next_states: NetInput<T>,
    pub actions: Vec<usize>,
    pub rewards: Vec<T>,
}

impl<T: Scalar> Minibatch<T> {
    pub fn from_samples(samples: &[&Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(CoreError::EmptyBuffer);
        }
        let states: Vec<(&Features, [f32; 3])> = samples.iter().map(|s| (&s.state, s.state_static)).collect();
        let next: Vec<(&Features, [f32; 3])> = samples.iter().map(|s| (&s.next, s.next_static)).collect();
        Ok(Self {
            states: NetInput::from_parts(&states)?,
            next_states: NetInput::from_parts(&next)?,
            actions: samples.iter().map(|s| s.action).collect(),
            rewards: samples.iter().map(|s| T::of(s.reward as f64)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// `[batch]` tensor of rewards.
    pub fn reward_tensor(&self) -> Tensor<T> {
        Tensor::from_vec(self.rewards.clone())
    }
}

/// Fixed-capacity store sampled uniformly with replacement. Once full, new
/// samples overwrite the oldest.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    kind: EncoderKind,
    capacity: usize,
    samples: Vec<Sample>,
    next_slot: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(kind: EncoderKind, capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            kind,
            capacity,
            samples: Vec::new(),
            next_slot: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Buffer sized to hold exactly `transitions`.
    pub fn from_transitions<'a>(
        kind: EncoderKind,
        transitions: impl IntoIterator<Item = &'a Transition>,
        seed: u64,
    ) -> Self {
        let samples: Vec<Sample> = transitions
            .into_iter()
            .map(|t| Sample::from_transition(kind, t))
            .collect();
        Self {
            kind,
            capacity: samples.len().max(1),
            samples,
            next_slot: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn push(&mut self, t: &Transition) {
        let s = Sample::from_transition(self.kind, t);
        if self.samples.len() < self.capacity {
            self.samples.push(s);
        } else {
            self.samples[self.next_slot] = s;
            self.next_slot = (self.next_slot + 1) % self.capacity;
        }
    }

    pub fn sample_indices(&mut self, batch: usize) -> Result<Vec<usize>> {
        if self.samples.is_empty() {
            return Err(CoreError::EmptyBuffer);
        }
        let n = self.samples.len();
        Ok((0..batch).map(|_| self.rng.random_range(0..n)).collect())
    }

    pub fn sample<T: Scalar>(&mut self, batch: usize) -> Result<Minibatch<T>> {
        let idx = self.sample_indices(batch)?;
        let picked: Vec<&Sample> = idx.iter().map(|&i| &self.samples[i]).collect();
        Minibatch::from_samples(&picked)
    }
}
