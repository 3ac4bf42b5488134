//! Small CPU neural-network engine: dense, LSTM and 2-D convolution layers
//! with hand-written backward passes, Adam, Polyak averaging, checkpoints and
//! finite-difference gradient checking.
//!
//! Layers are generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checks). Forward passes come in two flavours: `forward` is
//! read-only and cache-free, `forward_train` also returns the state its
//! `backward` needs.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod dense;
pub mod error;
pub mod gradcheck;
pub mod lstm;
pub mod params;
pub mod polyak;
pub mod scalar;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use conv::{Conv2dCache, Conv2dGrads, Conv2dLayer};
pub use dense::{Activation, DenseCache, DenseGrads, DenseLayer, Mlp, MlpCache};
pub use error::{NnError, Result};
pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport};
pub use lstm::{LstmCell, LstmGrads, LstmStepCache};
pub use params::{Module, ParameterSet};
pub use polyak::{soft_update, soft_update_module};
pub use scalar::Scalar;
pub use tensor::{concat_cols, split_cols, Tensor};
