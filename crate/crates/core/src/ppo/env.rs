//! Episodic environments for on-policy rollouts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setrl_highway::{Action, DynamicFeature, Observation, Simulator, StaticFeature};

pub trait Environment {
    fn observe(&self) -> Observation;
    /// Applies the action (after any safety check of the environment) and
    /// returns the reward.
    fn step(&mut self, action: Action) -> f64;
    fn done(&self) -> bool;
}

impl Environment for Simulator {
    fn observe(&self) -> Observation {
        Simulator::observe(self)
    }

    fn step(&mut self, action: Action) -> f64 {
        self.step_agent_action(action).reward
    }

    fn done(&self) -> bool {
        Simulator::done(self)
    }
}

/// Contextual bandit over set observations.
///
/// Each step shows one of two scenes drawn uniformly: a slow vehicle right
/// ahead in the ego lane with a free left lane, where `Left` pays 1, or an
/// empty road, where `Keep` pays 1. Every other action pays 0.
#[derive(Debug, Clone)]
pub struct BanditEnv {
    rng: ChaCha8Rng,
    blocked: bool,
    remaining: usize,
}

impl BanditEnv {
    pub fn new(seed: u64, length: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocked = rng.random_bool(0.5);
        Self { rng, blocked, remaining: length }
    }

    pub fn scene(blocked: bool) -> Observation {
        let dynamic = if blocked {
            vec![DynamicFeature { dr: 0.1, dv: -0.4, dl: 0 }]
        } else {
            Vec::new()
        };
        Observation {
            dynamic,
            static_features: StaticFeature { v_ego: 20.0, left_available: true, right_available: false },
        }
    }

    pub fn optimal(blocked: bool) -> Action {
        if blocked {
            Action::Left
        } else {
            Action::Keep
        }
    }
}

impl Environment for BanditEnv {
    fn observe(&self) -> Observation {
        Self::scene(self.blocked)
    }

    fn step(&mut self, action: Action) -> f64 {
        let r = (action == Self::optimal(self.blocked)) as u8 as f64;
        self.remaining = self.remaining.saturating_sub(1);
        self.blocked = self.rng.random_bool(0.5);
        r
    }

    fn done(&self) -> bool {
        self.remaining == 0
    }
}
