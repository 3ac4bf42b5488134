//! All-convolutional encoder for the occupancy grid.

use rand::Rng;
use serde::{Deserialize, Serialize};
use setrl_nn::{Conv2dCache, Conv2dLayer, Module, ParameterSet, Scalar, Tensor};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvEncoder<T = f32> {
    layers: Vec<Conv2dLayer<T>>,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone)]
pub struct ConvEncoderCache<T = f32> {
    layers: Vec<Conv2dCache<T>>,
    out_shape: Vec<usize>,
}

impl<T: Scalar> ConvEncoder<T> {
    /// Single-channel `rows x cols` input.
    pub fn new<R: Rng + ?Sized>(rows: usize, cols: usize, specs: &[ConvSpec], rng: &mut R) -> Self {
        assert!(!specs.is_empty(), "conv encoder needs at least one layer");
        let mut ch = 1;
        let layers = specs
            .iter()
            .map(|s| {
                let l = Conv2dLayer::new(ch, s.filters, s.kernel, s.stride, rng);
                ch = s.filters;
                l
            })
            .collect();
        Self { layers, rows, cols }
    }

    /// Flattened output width.
    pub fn out_dim(&self) -> usize {
        let (mut h, mut w) = (self.rows, self.cols);
        for l in &self.layers {
            (h, w) = l.output_dims(h, w);
        }
        self.layers.last().unwrap().filters() * h * w
    }

    pub fn input_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn cast<U: Scalar>(&self) -> ConvEncoder<U> {
        ConvEncoder {
            layers: self.layers.iter().map(Conv2dLayer::cast).collect(),
            rows: self.rows,
            cols: self.cols,
        }
    }

    fn image(&self, flat: &Tensor<T>) -> Result<Tensor<T>> {
        if flat.shape().len() != 2 || flat.row_len() != self.input_len() {
            return Err(CoreError::Dimension(format!(
                "grid input must be [batch x {}], got {:?}",
                self.input_len(),
                flat.shape()
            )));
        }
        Ok(flat.clone().reshape(vec![flat.rows(), 1, self.rows, self.cols])?)
    }

    /// Input rows are row-major grids.
    pub fn forward(&self, flat: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = self.image(flat)?;
        for l in &self.layers {
            x = l.forward(&x)?;
        }
        let b = x.shape()[0];
        let n = x.len() / b;
        Ok(x.reshape(vec![b, n])?)
    }

    pub fn forward_train(&self, flat: &Tensor<T>) -> Result<(Tensor<T>, ConvEncoderCache<T>)> {
        let mut x = self.image(flat)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (y, c) = l.forward_train(&x)?;
            caches.push(c);
            x = y;
        }
        let out_shape = x.shape().to_vec();
        let b = out_shape[0];
        let n = x.len() / b;
        Ok((
            x.reshape(vec![b, n])?,
            ConvEncoderCache {
                layers: caches,
                out_shape,
            },
        ))
    }

    pub fn backward(&self, cache: &ConvEncoderCache<T>, grad_out: &Tensor<T>) -> Result<ParameterSet<T>> {
        let mut g = grad_out.clone().reshape(cache.out_shape.clone())?;
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for (l, c) in self.layers.iter().zip(&cache.layers).rev() {
            let grads = l.backward(c, &g)?;
            g = grads.input;
            per_layer.push((grads.kernels, grads.bias));
        }
        let mut set = ParameterSet::new();
        for (i, (k, b)) in per_layer.into_iter().rev().enumerate() {
            set.push(format!("{i}.kernels"), k);
            set.push(format!("{i}.bias"), b);
        }
        Ok(set)
    }
}

impl<T: Scalar> Module<T> for ConvEncoder<T> {
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

    #[test]
    fn default_stack_flattens_to_3200() {
        let specs = [
            ConvSpec { filters: 16, kernel: (3, 1), stride: (2, 1) },
            ConvSpec { filters: 32, kernel: (3, 1), stride: (2, 1) },
        ];
        let enc = ConvEncoder::<f32>::new(80, 5, &specs, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(enc.out_dim(), 32 * 20 * 5);
        let y = enc.forward(&Tensor::zeros(&[2, 400])).unwrap();
        assert_eq!(y.shape(), &[2, 3200]);
    }
}
