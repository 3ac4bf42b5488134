//! Offline clipped double-Q learning over any of the encoders.

pub mod buffer;
pub mod ensemble;
pub mod train;

pub use buffer::{Minibatch, ReplayBuffer, Sample, Transition};
pub use ensemble::{argmax, clipped_double_targets, QEnsemble, StepMetrics, TrainConfig};
pub use train::{train_offline, DqnDescriptor, MetricsRow, TrainOutputs, METRICS_HEADER};
