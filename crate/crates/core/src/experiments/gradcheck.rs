//! Finite-difference checks of every layer type and every network layout,
//! run in f64 with random parameters and inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use setrl_highway::{DynamicFeature, Observation, StaticFeature};
use setrl_nn::{
    grad_check, Activation, Conv2dLayer, DenseLayer, GradCheckConfig, GradCheckReport, LstmCell, LstmGrads, Module,
    ParameterSet, Tensor,
};

use crate::encoders::{EncoderKind, NetConfig, NetInput, Network};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCase {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

impl GradientCase {
    fn new(name: impl Into<String>, r: GradCheckReport) -> Self {
        Self { name: name.into(), max_rel_error: r.max_rel_error, checked: r.checked }
    }
}

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches")
}

fn weighted(a: &Tensor<f64>, c: &Tensor<f64>) -> f64 {
    a.data().iter().zip(c.data()).map(|(x, y)| x * y).sum()
}

pub fn random_observation(rng: &mut impl Rng, max_len: usize) -> Observation {
    let n = rng.random_range(0..=max_len);
    Observation {
        dynamic: (0..n)
            .map(|_| DynamicFeature {
                dr: rng.random_range(-1.0..1.0),
                dv: rng.random_range(-0.5..0.5),
                dl: rng.random_range(-2..=2),
            })
            .collect(),
        static_features: StaticFeature {
            v_ego: rng.random_range(5.0..24.0),
            left_available: rng.random(),
            right_available: rng.random(),
        },
    }
}

fn dense_case(act: Activation, config: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut layer: DenseLayer<f64> = DenseLayer::new(12, 10, act, rng);
    let x = random(&[4, 12], rng);
    let c = random(&[4, 10], rng);
    let (_, cache) = layer.forward_train(&x)?;
    let g = layer.backward(&cache, &c)?;
    let mut analytic = ParameterSet::new();
    analytic.push("weight", g.weight);
    analytic.push("bias", g.bias);
    Ok(grad_check(&mut layer, &analytic, |l| weighted(&l.forward(&x).expect("shapes"), &c), config))
}

fn lstm_case(config: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut cell: LstmCell<f64> = LstmCell::new(5, 6, rng);
    let xs: Vec<_> = (0..4).map(|_| random(&[3, 5], rng)).collect();
    let ch = random(&[3, 6], rng);
    let loss = |m: &LstmCell<f64>| {
        let mut h = Tensor::zeros(&[3, 6]);
        let mut c = Tensor::zeros(&[3, 6]);
        for x in &xs {
            (h, c) = m.step(x, &h, &c).expect("shapes");
        }
        weighted(&h, &ch)
    };
    let mut h = Tensor::zeros(&[3, 6]);
    let mut c = Tensor::zeros(&[3, 6]);
    let mut caches = Vec::new();
    for x in &xs {
        let (h2, c2, cache) = cell.step_train(x, &h, &c)?;
        (h, c) = (h2, c2);
        caches.push(cache);
    }
    let mut grads = LstmGrads::zeros(&cell);
    let (mut gh, mut gc) = (ch.clone(), Tensor::zeros(&[3, 6]));
    for cache in caches.iter().rev() {
        let (_, gh2, gc2) = cell.backward_step(cache, &gh, &gc, &mut grads)?;
        (gh, gc) = (gh2, gc2);
    }
    let analytic = grads.into_parameter_set("");
    Ok(grad_check(&mut cell, &analytic, loss, config))
}

fn conv_case(config: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut conv: Conv2dLayer<f64> = Conv2dLayer::new(2, 8, (3, 2), (2, 1), rng);
    let x = random(&[2, 2, 9, 5], rng);
    let (y, cache) = conv.forward_train(&x)?;
    let c = random(y.shape(), rng);
    let g = conv.backward(&cache, &c)?;
    let mut analytic = ParameterSet::new();
    analytic.push("kernels", g.kernels);
    analytic.push("bias", g.bias);
    Ok(grad_check(&mut conv, &analytic, |m| weighted(&m.forward(&x).expect("shapes"), &c), config))
}

/// Checks `sum(c * Q)` of a full network on four random scenes, one of
/// them empty.
pub fn network_case(net_config: &NetConfig, config: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net: Network<f64> = Network::<f32>::new(net_config, &mut rng)?.cast();
    let mut obs: Vec<Observation> = (0..4).map(|_| random_observation(&mut rng, 10)).collect();
    obs[1].dynamic.clear();
    let refs: Vec<&Observation> = obs.iter().collect();
    let input: NetInput<f64> = NetInput::<f32>::from_observations(net_config.kind(), &refs)?.cast();
    let c = random(&[4, net_config.outputs], &mut rng);
    let (_, cache) = net.forward_train(&input)?;
    let analytic = net.backward(&cache, &c)?;
    analytic.check_aligned(&net.parameters())?;
    Ok(grad_check(&mut net, &analytic, |n| weighted(&n.forward(&input).expect("shapes"), &c), config))
}

/// Every layer type and every default network layout.
pub fn gradient_suite(seed: u64, config: &GradCheckConfig) -> Result<Vec<GradientCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![
        GradientCase::new("dense.relu", dense_case(Activation::Relu, config, &mut rng)?),
        GradientCase::new("dense.linear", dense_case(Activation::Linear, config, &mut rng)?),
        GradientCase::new("lstm.bptt", lstm_case(config, &mut rng)?),
        GradientCase::new("conv2d", conv_case(config, &mut rng)?),
    ];
    for kind in EncoderKind::ALL {
        let r = network_case(&NetConfig::q_network(kind), config, seed.wrapping_add(kind as u64 + 1))?;
        out.push(GradientCase::new(format!("{kind}-q"), r));
    }
    Ok(out)
}
