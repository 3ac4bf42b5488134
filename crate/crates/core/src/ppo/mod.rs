//! On-policy Deep Set PPO: rollouts, Monte Carlo advantages and the clipped
//! surrogate update.

pub mod agent;
pub mod env;
pub mod rollout;

pub use agent::{
    clipped_surrogate, surrogate_gradient, train_ppo, value_config, HighwayEpisodes, PpoAgent, PpoConfig,
    PpoDescriptor, PpoMetricsRow, PpoOutputs, UpdateMetrics, PPO_METRICS_HEADER,
};
pub use env::{BanditEnv, Environment};
pub use rollout::{advantages, collect_rollout, compute_advantages, log_softmax, sample_index, RolloutBuffer, RolloutStep};
