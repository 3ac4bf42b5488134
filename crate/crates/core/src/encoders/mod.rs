//! Observation encoders and the Q/policy/value networks built on them.

pub mod cnn;
pub mod deepset;
pub mod grids;
pub mod network;
pub mod set2set;
mod set_batch;

pub use cnn::{ConvEncoder, ConvSpec};
pub use deepset::{DeepSetEncoder, Pooling};
pub use grids::{
    build_occupancy_grid, build_relational_grid, relational_slots, OccupancyGridSpec,
    RelationalGridSpec,
};
pub use network::{
    featurize, Encoder, EncoderConfig, EncoderInput, EncoderKind, Features, NetConfig, NetInput,
    Network, NetworkCache, ELEMENT_DIM, STATIC_DIM,
};
pub use set2set::{softmax, Set2SetEncoder};
pub use set_batch::SetBatch;
