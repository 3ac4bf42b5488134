//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use setrl::qlearning::Transition;
use setrl_highway::{Action, DynamicFeature, Observation, StaticFeature};

/// Rewards of the two-state bandit: state 0 is an empty road, state 1 has a
/// slow vehicle ahead. With a zero discount these are also the optimal
/// Q-values.
pub const BANDIT_Q: [[f32; 3]; 2] = [[0.9, 0.2, 0.5], [0.1, 0.8, 0.4]];

pub fn bandit_state(s: usize) -> Observation {
    Observation {
        dynamic: if s == 1 {
            vec![DynamicFeature { dr: 0.15, dv: -0.3, dl: 0 }]
        } else {
            Vec::new()
        },
        static_features: StaticFeature { v_ego: 18.0, left_available: true, right_available: true },
    }
}

/// Every state-action pair once; next states alternate.
pub fn bandit_transitions() -> Vec<Transition> {
    let mut out = Vec::new();
    for s in 0..2 {
        for a in Action::ALL {
            out.push(Transition {
                state: bandit_state(s),
                action: a,
                reward: BANDIT_Q[s][a.index()],
                next_state: bandit_state(1 - s),
            });
        }
    }
    out
}
