//! Fully connected layers and multi-layer perceptrons.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::params::{Module, ParameterSet};
use crate::scalar::{gemm, Scalar, View};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Linear => z,
        }
    }

    /// Derivative with respect to the pre-activation; ReLU'(0) = 0.
    #[inline]
    pub fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Linear => T::one(),
        }
    }
}

/// Samples `n` values uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_init<T: Scalar, R: Rng + ?Sized>(n: usize, fan_in: usize, rng: &mut R) -> Vec<T> {
    let bound = (1.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| T::of(rng.random_range(-bound..=bound)))
        .collect()
}

/// `y = act(x W^T + b)` with `W` stored as `[out x in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T = f32> {
    weight: Tensor<T>,
    bias: Tensor<T>,
    activation: Activation,
}

/// Forward state needed by [`DenseLayer::backward`].
#[derive(Debug, Clone)]
pub struct DenseCache<T = f32> {
    input: Tensor<T>,
    preact: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub input: Tensor<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let weight = Tensor::new(vec![out_dim, in_dim], uniform_init(out_dim * in_dim, in_dim, rng))
            .expect("positive layer dims");
        let bias = Tensor::new(vec![out_dim], uniform_init(out_dim, in_dim, rng)).expect("positive layer dims");
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(NnError::InvalidShape {
                shape: weight.shape().to_vec(),
                len: weight.len(),
            });
        }
        bias.expect_shape(&[weight.shape()[0]], "dense bias")?;
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight(&self) -> &Tensor<T> {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    pub fn cast<U: Scalar>(&self) -> DenseLayer<U> {
        DenseLayer {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            activation: self.activation,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != 2 || x.shape()[1] != self.in_dim() {
            return Err(NnError::ShapeMismatch {
                context: "dense input",
                expected: vec![x.shape()[0], self.in_dim()],
                found: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn preactivation(&self, x: &Tensor<T>) -> Tensor<T> {
        let (batch, out, n_in) = (x.rows(), self.out_dim(), self.in_dim());
        let mut z = Vec::with_capacity(batch * out);
        for _ in 0..batch {
            z.extend_from_slice(self.bias.data());
        }
        gemm(
            View::new(x.data(), batch, n_in),
            View::new(self.weight.data(), out, n_in).t(),
            T::one(),
            &mut z,
        );
        Tensor::new(vec![batch, out], z).expect("dense output shape")
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut z = self.preactivation(x);
        let act = self.activation;
        z.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        Ok(z)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, DenseCache<T>)> {
        self.check_input(x)?;
        let z = self.preactivation(x);
        let act = self.activation;
        let y = Tensor::new(
            z.shape().to_vec(),
            z.data().iter().map(|v| act.apply(*v)).collect(),
        )?;
        Ok((
            y,
            DenseCache {
                input: x.clone(),
                preact: z,
            },
        ))
    }

    pub fn backward(&self, cache: &DenseCache<T>, grad_out: &Tensor<T>) -> Result<DenseGrads<T>> {
        if cache.preact.shape() != grad_out.shape() || cache.input.shape()[1] != self.in_dim() {
            return Err(NnError::CacheMismatch("dense"));
        }
        let (batch, n_in, n_out) = (grad_out.rows(), self.in_dim(), self.out_dim());
        let act = self.activation;
        let dz: Vec<T> = grad_out
            .data()
            .iter()
            .zip(cache.preact.data())
            .map(|(g, z)| *g * act.derivative(*z))
            .collect();

        let mut gw = vec![T::zero(); n_out * n_in];
        let mut gb = vec![T::zero(); n_out];
        let mut gx = vec![T::zero(); batch * n_in];
        let dzv = View::new(&dz, batch, n_out);
        gemm(dzv.t(), View::new(cache.input.data(), batch, n_in), T::zero(), &mut gw);
        gemm(dzv, View::new(self.weight.data(), n_out, n_in), T::zero(), &mut gx);
        for r in 0..batch {
            for (b, d) in gb.iter_mut().zip(&dz[r * n_out..(r + 1) * n_out]) {
                *b += *d;
            }
        }
        Ok(DenseGrads {
            weight: Tensor::new(vec![n_out, n_in], gw)?,
            bias: Tensor::new(vec![n_out], gb)?,
            input: Tensor::new(vec![batch, n_in], gx)?,
        })
    }
}

impl<T: Scalar> Module<T> for DenseLayer<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(format!("{prefix}weight"), &self.weight);
        f(format!("{prefix}bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(format!("{prefix}weight"), &mut self.weight);
        f(format!("{prefix}bias"), &mut self.bias);
    }
}

/// Stack of dense layers; ReLU on hidden layers, configurable output activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T = f32> {
    layers: Vec<DenseLayer<T>>,
}

#[derive(Debug, Clone)]
pub struct MlpCache<T = f32> {
    layers: Vec<DenseCache<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// `sizes` lists the output width of each layer.
    pub fn new<R: Rng + ?Sized>(
        in_dim: usize,
        sizes: &[usize],
        output_activation: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(!sizes.is_empty(), "mlp needs at least one layer");
        let mut layers = Vec::with_capacity(sizes.len());
        let mut prev = in_dim;
        for (i, &s) in sizes.iter().enumerate() {
            let act = if i + 1 == sizes.len() {
                output_activation
            } else {
                Activation::Relu
            };
            layers.push(DenseLayer::new(prev, s, act, rng));
            prev = s;
        }
        Self { layers }
    }

    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(NnError::ShapeMismatch {
                    context: "mlp layer chain",
                    expected: vec![w[0].out_dim()],
                    found: vec![w[1].in_dim()],
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self.layers.iter().map(DenseLayer::cast).collect(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.layers[0].forward(x)?;
        for l in &self.layers[1..] {
            h = l.forward(&h)?;
        }
        Ok(h)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, MlpCache<T>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let (mut h, c) = self.layers[0].forward_train(x)?;
        caches.push(c);
        for l in &self.layers[1..] {
            let (next, c) = l.forward_train(&h)?;
            caches.push(c);
            h = next;
        }
        Ok((h, MlpCache { layers: caches }))
    }

    /// Returns parameter gradients (in visit order) and the input gradient.
    pub fn backward(
        &self,
        cache: &MlpCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(ParameterSet<T>, Tensor<T>)> {
        if cache.layers.len() != self.layers.len() {
            return Err(NnError::CacheMismatch("mlp depth"));
        }
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (l, c) in self.layers.iter().zip(&cache.layers).rev() {
            let grads = l.backward(c, &g)?;
            g = grads.input;
            per_layer.push((grads.weight, grads.bias));
        }
        let mut set = ParameterSet::new();
        for (i, (w, b)) in per_layer.into_iter().rev().enumerate() {
            set.push(format!("{i}.weight"), w);
            set.push(format!("{i}.bias"), b);
        }
        Ok((set, g))
    }
}

impl<T: Scalar> Module<T> for Mlp<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit_params(&format!("{prefix}{i}."), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_params_mut(&format!("{prefix}{i}."), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(w: &[[f32; 2]; 2], b: [f32; 2], act: Activation) -> DenseLayer<f32> {
        let w = Tensor::new(vec![2, 2], w.iter().flatten().copied().collect()).unwrap();
        DenseLayer::from_parts(w, Tensor::from_vec(b.to_vec()), act).unwrap()
    }

    fn row(v: &[f32]) -> Tensor<f32> {
        Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn identity_linear() {
        let l = layer(&[[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], Activation::Linear);
        assert_eq!(l.forward(&row(&[1.0, 2.0])).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn identity_relu_clamps() {
        let l = layer(&[[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], Activation::Relu);
        assert_eq!(l.forward(&row(&[-1.0, 2.0])).unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn hand_computed_relu() {
        // z = (1 - 1 + 0.5, 0 - 2 + 0) = (0.5, -2)
        let l = layer(&[[1.0, 1.0], [0.0, 2.0]], [0.5, 0.0], Activation::Relu);
        assert_eq!(l.forward(&row(&[1.0, -1.0])).unwrap().data(), &[0.5, 0.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let l = layer(&[[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], Activation::Linear);
        let err = l.forward(&row(&[1.0, 2.0, 3.0])).unwrap_err().to_string();
        assert!(err.contains("[1, 2]") && err.contains("[1, 3]"), "{err}");
    }

    #[test]
    fn linear_backward_is_transpose() {
        let l = layer(&[[1.0, 2.0], [3.0, 4.0]], [0.0, 0.0], Activation::Linear);
        let (_, cache) = l.forward_train(&row(&[0.3, -0.7])).unwrap();
        let g = l.backward(&cache, &row(&[1.0, 0.0])).unwrap();
        assert_eq!(g.input.data(), &[1.0, 2.0]);
    }

    #[test]
    fn dead_relu_passes_no_gradient() {
        let l = layer(&[[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], Activation::Relu);
        let (_, cache) = l.forward_train(&row(&[-1.0, 2.0])).unwrap();
        let g = l.backward(&cache, &row(&[1.0, 1.0])).unwrap();
        assert_eq!(g.input.data(), &[0.0, 1.0]);
        assert_eq!(g.weight.data(), &[0.0, 0.0, -1.0, 2.0]);
        assert_eq!(g.bias.data(), &[0.0, 1.0]);
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        assert_eq!(Activation::Relu.derivative(0.0f32), 0.0);
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let l = layer(&[[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], Activation::Relu);
        let (_, cache) = l.forward_train(&row(&[1.0, 2.0])).unwrap();
        let g = Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap();
        assert!(matches!(l.backward(&cache, &g), Err(NnError::CacheMismatch(_))));
    }

    #[test]
    fn init_within_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l: DenseLayer<f32> = DenseLayer::new(16, 8, Activation::Relu, &mut rng);
        assert!(l.weight().max_abs() <= 0.25 && l.bias().max_abs() <= 0.25);
    }

    #[test]
    fn mlp_grad_names_match_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m: Mlp<f32> = Mlp::new(3, &[4, 5, 2], Activation::Linear, &mut rng);
        let x = Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, -0.1, 0.5, 0.9]).unwrap();
        let (y, cache) = m.forward_train(&x).unwrap();
        assert_eq!(y, m.forward(&x).unwrap());
        let (grads, gx) = m.backward(&cache, &Tensor::zeros(y.shape())).unwrap();
        m.parameters().check_aligned(&grads).unwrap();
        assert_eq!(gx.shape(), &[2, 3]);
    }
}
