//! Set-input reinforcement learning for highway lane changes: observation
//! encoders, offline clipped double-Q learning, PPO and the experiment
//! harness.

pub mod encoders;
pub mod error;
pub mod experiments;
pub mod ppo;
pub mod qlearning;

pub use error::{CoreError, Result};
