//! Encoder + dense head networks and their self-describing configuration.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use setrl_highway::Observation;
use setrl_nn::{
    concat_cols, split_cols, Activation, Checkpoint, Mlp, MlpCache, Module, ParameterSet, Scalar,
    Tensor,
};

use super::cnn::{ConvEncoder, ConvEncoderCache, ConvSpec};
use super::deepset::{DeepSetCache, DeepSetEncoder, Pooling};
use super::grids::{
    build_occupancy_grid, relational_slots, OccupancyGridSpec, RelationalGridSpec,
};
use super::set2set::{Set2SetCache, Set2SetEncoder};
use super::SetBatch;
use crate::error::{CoreError, Result};

/// Width of the static input block.
pub const STATIC_DIM: usize = 3;
/// Width of one set element.
pub const ELEMENT_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    DeepSet,
    Set2Set,
    Fixed,
    Grid,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 4] = [Self::DeepSet, Self::Set2Set, Self::Fixed, Self::Grid];

    pub fn name(self) -> &'static str {
        match self {
            Self::DeepSet => "deepset",
            Self::Set2Set => "set2set",
            Self::Fixed => "fixed",
            Self::Grid => "grid",
        }
    }

    pub fn is_set(self) -> bool {
        matches!(self, Self::DeepSet | Self::Set2Set)
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CoreError::UnknownEncoder(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderConfig {
    DeepSet {
        phi: Vec<usize>,
        rho: Vec<usize>,
        pooling: Pooling,
    },
    Set2Set {
        layers: usize,
        hidden: usize,
        readout: usize,
        iterations: usize,
    },
    Fixed,
    Grid {
        convs: Vec<ConvSpec>,
    },
}

impl EncoderConfig {
    pub fn default_for(kind: EncoderKind) -> Self {
        match kind {
            EncoderKind::DeepSet => Self::DeepSet {
                phi: vec![20, 80],
                rho: vec![80, 20],
                pooling: Pooling::Sum,
            },
            EncoderKind::Set2Set => Self::Set2Set {
                layers: 1,
                hidden: 6,
                readout: 32,
                iterations: 5,
            },
            EncoderKind::Fixed => Self::Fixed,
            EncoderKind::Grid => Self::Grid {
                convs: vec![
                    ConvSpec {
                        filters: 16,
                        kernel: (3, 1),
                        stride: (2, 1),
                    },
                    ConvSpec {
                        filters: 32,
                        kernel: (3, 1),
                        stride: (2, 1),
                    },
                ],
            },
        }
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            Self::DeepSet { .. } => EncoderKind::DeepSet,
            Self::Set2Set { .. } => EncoderKind::Set2Set,
            Self::Fixed => EncoderKind::Fixed,
            Self::Grid { .. } => EncoderKind::Grid,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = match self {
            Self::DeepSet { phi, rho, .. } => {
                phi.is_empty() || rho.is_empty() || phi.iter().chain(rho).any(|&d| d == 0)
            }
            Self::Set2Set {
                layers,
                hidden,
                readout,
                iterations,
            } => *layers == 0 || *hidden == 0 || *readout == 0 || *iterations == 0,
            Self::Fixed => false,
            Self::Grid { convs } => {
                convs.is_empty()
                    || convs.iter().any(|c| {
                        c.filters == 0
                            || c.kernel.0 == 0
                            || c.kernel.1 == 0
                            || c.stride.0 == 0
                            || c.stride.1 == 0
                    })
            }
        };
        if bad {
            return Err(CoreError::Config(format!("invalid encoder config {self:?}")));
        }
        Ok(())
    }
}

/// Full network layout; serialized into checkpoint headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub encoder: EncoderConfig,
    /// Hidden ReLU layer widths of the head.
    pub head: Vec<usize>,
    /// Linear output width.
    pub outputs: usize,
}

impl NetConfig {
    /// Q-network with the default layout for `kind`.
    pub fn q_network(kind: EncoderKind) -> Self {
        Self {
            encoder: EncoderConfig::default_for(kind),
            head: vec![100, 100],
            outputs: 3,
        }
    }

    pub fn kind(&self) -> EncoderKind {
        self.encoder.kind()
    }

    pub fn descriptor(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_descriptor(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| CoreError::Config(format!("bad architecture descriptor: {e}")))
    }
}

/// Per-sample encoder input, computed once per observation.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Set(Vec<[f32; ELEMENT_DIM]>),
    Flat(Vec<f32>),
}

/// Encoder view of an observation.
pub fn featurize(kind: EncoderKind, obs: &Observation) -> Features {
    match kind {
        EncoderKind::DeepSet | EncoderKind::Set2Set => {
            Features::Set(obs.dynamic.iter().map(|f| f.as_input()).collect())
        }
        EncoderKind::Fixed => Features::Flat(relational_slots(obs, &RelationalGridSpec::default())),
        EncoderKind::Grid => Features::Flat(build_occupancy_grid(obs, &OccupancyGridSpec::default())),
    }
}

/// Batched encoder input.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderInput<T = f32> {
    Set(SetBatch<T>),
    Flat(Tensor<T>),
}

impl<T: Scalar> EncoderInput<T> {
    pub fn from_features(items: &[&Features]) -> Result<Self> {
        match items.first() {
            None => Err(CoreError::Dimension("empty batch".into())),
            Some(Features::Set(_)) => {
                let sets = items
                    .iter()
                    .map(|f| match f {
                        Features::Set(s) => Ok(s.iter().map(|e| e.map(|v| T::of(v as f64))).collect()),
                        Features::Flat(_) => Err(CoreError::Dimension("mixed feature kinds".into())),
                    })
                    .collect::<Result<Vec<Vec<[T; 3]>>>>()?;
                Ok(Self::Set(SetBatch::from_sets(&sets)))
            }
            Some(Features::Flat(first)) => {
                let width = first.len();
                let mut data = Vec::with_capacity(width * items.len());
                for f in items {
                    match f {
                        Features::Flat(v) if v.len() == width => {
                            data.extend(v.iter().map(|x| T::of(*x as f64)))
                        }
                        _ => return Err(CoreError::Dimension("ragged flat features".into())),
                    }
                }
                Ok(Self::Flat(Tensor::new(vec![items.len(), width], data)?))
            }
        }
    }

    pub fn batch(&self) -> usize {
        match self {
            Self::Set(s) => s.batch(),
            Self::Flat(t) => t.rows(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> EncoderInput<U> {
        match self {
            Self::Set(s) => EncoderInput::Set(s.cast()),
            Self::Flat(t) => EncoderInput::Flat(t.cast()),
        }
    }
}

/// Network input: encoder part plus `[batch x 3]` static features.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInput<T = f32> {
    pub encoder: EncoderInput<T>,
    pub statics: Tensor<T>,
}

impl<T: Scalar> NetInput<T> {
    pub fn new(encoder: EncoderInput<T>, statics: Tensor<T>) -> Result<Self> {
        if statics.shape() != [encoder.batch(), STATIC_DIM] {
            return Err(CoreError::Dimension(format!(
                "static block {:?} does not match batch {}",
                statics.shape(),
                encoder.batch()
            )));
        }
        Ok(Self { encoder, statics })
    }

    pub fn from_parts(items: &[(&Features, [f32; STATIC_DIM])]) -> Result<Self> {
        let feats: Vec<&Features> = items.iter().map(|(f, _)| *f).collect();
        let statics: Vec<T> = items
            .iter()
            .flat_map(|(_, s)| s.iter().map(|v| T::of(*v as f64)))
            .collect();
        let encoder = EncoderInput::from_features(&feats)?;
        Self::new(encoder, Tensor::new(vec![items.len(), STATIC_DIM], statics)?)
    }

    pub fn from_observations(kind: EncoderKind, obs: &[&Observation]) -> Result<Self> {
        let feats: Vec<Features> = obs.iter().map(|o| featurize(kind, o)).collect();
        let items: Vec<(&Features, [f32; 3])> = feats
            .iter()
            .zip(obs)
            .map(|(f, o)| (f, o.static_features.as_input()))
            .collect();
        Self::from_parts(&items)
    }

    pub fn batch(&self) -> usize {
        self.statics.rows()
    }

    pub fn cast<U: Scalar>(&self) -> NetInput<U> {
        NetInput {
            encoder: self.encoder.cast(),
            statics: self.statics.cast(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder<T = f32> {
    DeepSet(DeepSetEncoder<T>),
    Set2Set(Set2SetEncoder<T>),
    Fixed { width: usize },
    Grid(ConvEncoder<T>),
}

#[derive(Debug, Clone)]
enum EncoderCache<T> {
    DeepSet(DeepSetCache<T>),
    Set2Set(Set2SetCache<T>),
    Fixed,
    Grid(ConvEncoderCache<T>),
}

impl<T: Scalar> Encoder<T> {
    fn build<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Self {
        match config {
            EncoderConfig::DeepSet { phi, rho, pooling } => {
                Self::DeepSet(DeepSetEncoder::new(ELEMENT_DIM, phi, rho, *pooling, rng))
            }
            EncoderConfig::Set2Set {
                layers,
                hidden,
                readout,
                iterations,
            } => Self::Set2Set(Set2SetEncoder::new(
                ELEMENT_DIM,
                *hidden,
                *layers,
                *readout,
                *iterations,
                rng,
            )),
            EncoderConfig::Fixed => Self::Fixed {
                width: RelationalGridSpec::default().slot_features(),
            },
            EncoderConfig::Grid { convs } => {
                let spec = OccupancyGridSpec::default();
                Self::Grid(ConvEncoder::new(spec.rows, spec.cols, convs, rng))
            }
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Self::DeepSet(e) => e.out_dim(),
            Self::Set2Set(e) => e.out_dim(),
            Self::Fixed { width } => *width,
            Self::Grid(e) => e.out_dim(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Encoder<U> {
        match self {
            Self::DeepSet(e) => Encoder::DeepSet(e.cast()),
            Self::Set2Set(e) => Encoder::Set2Set(e.cast()),
            Self::Fixed { width } => Encoder::Fixed { width: *width },
            Self::Grid(e) => Encoder::Grid(e.cast()),
        }
    }

    fn mismatch(&self) -> CoreError {
        CoreError::Dimension(format!(
            "input kind does not match {} encoder",
            match self {
                Self::DeepSet(_) => "deepset",
                Self::Set2Set(_) => "set2set",
                Self::Fixed { .. } => "fixed",
                Self::Grid(_) => "grid",
            }
        ))
    }

    pub fn forward(&self, input: &EncoderInput<T>) -> Result<Tensor<T>> {
        match (self, input) {
            (Self::DeepSet(e), EncoderInput::Set(s)) => e.forward(s),
            (Self::Set2Set(e), EncoderInput::Set(s)) => e.forward(s),
            (Self::Fixed { width }, EncoderInput::Flat(t)) if t.row_len() == *width => Ok(t.clone()),
            (Self::Grid(e), EncoderInput::Flat(t)) => e.forward(t),
            _ => Err(self.mismatch()),
        }
    }

    fn forward_train(&self, input: &EncoderInput<T>) -> Result<(Tensor<T>, EncoderCache<T>)> {
        match (self, input) {
            (Self::DeepSet(e), EncoderInput::Set(s)) => {
                e.forward_train(s).map(|(y, c)| (y, EncoderCache::DeepSet(c)))
            }
            (Self::Set2Set(e), EncoderInput::Set(s)) => {
                e.forward_train(s).map(|(y, c)| (y, EncoderCache::Set2Set(c)))
            }
            (Self::Fixed { width }, EncoderInput::Flat(t)) if t.row_len() == *width => {
                Ok((t.clone(), EncoderCache::Fixed))
            }
            (Self::Grid(e), EncoderInput::Flat(t)) => {
                e.forward_train(t).map(|(y, c)| (y, EncoderCache::Grid(c)))
            }
            _ => Err(self.mismatch()),
        }
    }

    fn backward(&self, cache: &EncoderCache<T>, grad: &Tensor<T>) -> Result<ParameterSet<T>> {
        match (self, cache) {
            (Self::DeepSet(e), EncoderCache::DeepSet(c)) => e.backward(c, grad),
            (Self::Set2Set(e), EncoderCache::Set2Set(c)) => e.backward(c, grad),
            (Self::Fixed { .. }, EncoderCache::Fixed) => Ok(ParameterSet::new()),
            (Self::Grid(e), EncoderCache::Grid(c)) => e.backward(c, grad),
            _ => Err(CoreError::Nn(setrl_nn::NnError::CacheMismatch("encoder kind"))),
        }
    }
}

impl<T: Scalar> Module<T> for Encoder<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        match self {
            Self::DeepSet(e) => e.visit_params(prefix, f),
            Self::Set2Set(e) => e.visit_params(prefix, f),
            Self::Fixed { .. } => {}
            Self::Grid(e) => e.visit_params(prefix, f),
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        match self {
            Self::DeepSet(e) => e.visit_params_mut(prefix, f),
            Self::Set2Set(e) => e.visit_params_mut(prefix, f),
            Self::Fixed { .. } => {}
            Self::Grid(e) => e.visit_params_mut(prefix, f),
        }
    }
}

/// `head([encoder(x_dyn), x_static])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    config: NetConfig,
    encoder: Encoder<T>,
    head: Mlp<T>,
}

/// Forward state for [`Network::backward`].
#[derive(Debug, Clone)]
pub struct NetworkCache<T = f32> {
    encoder: EncoderCache<T>,
    head: MlpCache<T>,
    encoded: usize,
}

impl<T: Scalar> Network<T> {
    pub fn new<R: Rng + ?Sized>(config: &NetConfig, rng: &mut R) -> Result<Self> {
        config.encoder.validate()?;
        if config.outputs == 0 || config.head.contains(&0) {
            return Err(CoreError::Config(format!("invalid head {:?} -> {}", config.head, config.outputs)));
        }
        let encoder = Encoder::build(&config.encoder, rng);
        let mut sizes = config.head.clone();
        sizes.push(config.outputs);
        let head = Mlp::new(encoder.out_dim() + STATIC_DIM, &sizes, Activation::Linear, rng);
        Ok(Self {
            config: config.clone(),
            encoder,
            head,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn kind(&self) -> EncoderKind {
        self.config.kind()
    }

    pub fn encoder(&self) -> &Encoder<T> {
        &self.encoder
    }

    pub fn head(&self) -> &Mlp<T> {
        &self.head
    }

    pub fn outputs(&self) -> usize {
        self.config.outputs
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            encoder: self.encoder.cast(),
            head: self.head.cast(),
        }
    }

    /// Encoder output alone, `[batch x encoder width]`.
    pub fn encode(&self, input: &EncoderInput<T>) -> Result<Tensor<T>> {
        self.encoder.forward(input)
    }

    fn head_input(&self, encoded: &Tensor<T>, statics: &Tensor<T>) -> Result<Tensor<T>> {
        if statics.shape() != [encoded.rows(), STATIC_DIM] {
            return Err(CoreError::Dimension(format!(
                "static block {:?} does not match batch {}",
                statics.shape(),
                encoded.rows()
            )));
        }
        Ok(concat_cols(&[encoded, statics])?)
    }

    /// `[batch x outputs]`.
    pub fn forward(&self, input: &NetInput<T>) -> Result<Tensor<T>> {
        let encoded = self.encoder.forward(&input.encoder)?;
        Ok(self.head.forward(&self.head_input(&encoded, &input.statics)?)?)
    }

    pub fn forward_train(&self, input: &NetInput<T>) -> Result<(Tensor<T>, NetworkCache<T>)> {
        let (encoded, encoder) = self.encoder.forward_train(&input.encoder)?;
        let width = encoded.row_len();
        let (out, head) = self.head.forward_train(&self.head_input(&encoded, &input.statics)?)?;
        Ok((
            out,
            NetworkCache {
                encoder,
                head,
                encoded: width,
            },
        ))
    }

    /// Parameter gradients, aligned with [`Module::parameters`].
    pub fn backward(&self, cache: &NetworkCache<T>, grad_out: &Tensor<T>) -> Result<ParameterSet<T>> {
        let (head_grads, grad_in) = self.head.backward(&cache.head, grad_out)?;
        let parts = split_cols(&grad_in, &[cache.encoded, STATIC_DIM])?;
        let enc_grads = self.encoder.backward(&cache.encoder, &parts[0])?;
        let mut set = ParameterSet::new();
        set.extend_prefixed("encoder.", enc_grads);
        set.extend_prefixed("head.", head_grads);
        Ok(set)
    }

    /// Q-values of a single observation.
    pub fn evaluate(&self, obs: &Observation) -> Result<Vec<T>> {
        let input = NetInput::from_observations(self.kind(), &[obs])?;
        Ok(self.forward(&input)?.into_data())
    }
}

impl Network<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.config.descriptor(), self.parameters())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = NetConfig::from_descriptor(&ckpt.descriptor)?;
        // weights are overwritten; the seed only fills the layout
        let mut net = Self::new(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
        net.load_parameters(&ckpt.params)?;
        Ok(net)
    }
}

impl<T: Scalar> Module<T> for Network<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.encoder.visit_params(&format!("{prefix}encoder."), f);
        self.head.visit_params(&format!("{prefix}head."), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.encoder.visit_params_mut(&format!("{prefix}encoder."), f);
        self.head.visit_params_mut(&format!("{prefix}head."), f);
    }
}
