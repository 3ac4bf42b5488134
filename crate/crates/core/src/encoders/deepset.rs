//! Deep Set encoder `rho(pool(phi(x)))`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use setrl_nn::{Activation, Mlp, MlpCache, Module, ParameterSet, Scalar, Tensor};

use super::SetBatch;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Sum,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepSetEncoder<T = f32> {
    phi: Mlp<T>,
    rho: Mlp<T>,
    pooling: Pooling,
}

#[derive(Debug, Clone)]
pub struct DeepSetCache<T = f32> {
    phi: Option<MlpCache<T>>,
    rho: MlpCache<T>,
    /// Max pooling: winning element row per (sample, feature), `usize::MAX` for empty sets.
    argmax: Vec<usize>,
    offsets: Vec<usize>,
}

impl<T: Scalar> DeepSetEncoder<T> {
    /// Every layer of both networks uses ReLU.
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        phi: &[usize],
        rho: &[usize],
        pooling: Pooling,
        rng: &mut R,
    ) -> Self {
        let phi = Mlp::new(input, phi, Activation::Relu, rng);
        let rho = Mlp::new(phi.out_dim(), rho, Activation::Relu, rng);
        Self { phi, rho, pooling }
    }

    pub fn from_parts(phi: Mlp<T>, rho: Mlp<T>, pooling: Pooling) -> Self {
        assert_eq!(phi.out_dim(), rho.in_dim(), "phi output must feed rho");
        Self { phi, rho, pooling }
    }

    pub fn phi(&self) -> &Mlp<T> {
        &self.phi
    }

    pub fn rho(&self) -> &Mlp<T> {
        &self.rho
    }

    pub fn out_dim(&self) -> usize {
        self.rho.out_dim()
    }

    pub fn cast<U: Scalar>(&self) -> DeepSetEncoder<U> {
        DeepSetEncoder {
            phi: self.phi.cast(),
            rho: self.rho.cast(),
            pooling: self.pooling,
        }
    }

    /// Pools element embeddings per sample. Sums accumulate in `f64` in row
    /// order, so any permutation of a set gives the same rounded result.
    fn pool(&self, embedded: Option<&Tensor<T>>, sets: &SetBatch<T>) -> (Tensor<T>, Vec<usize>) {
        let width = self.phi.out_dim();
        let b = sets.batch();
        let mut pooled = vec![T::zero(); b * width];
        let mut argmax = Vec::new();
        if self.pooling == Pooling::Max {
            argmax = vec![usize::MAX; b * width];
        }
        if let Some(emb) = embedded {
            for i in 0..b {
                let out = &mut pooled[i * width..(i + 1) * width];
                match self.pooling {
                    Pooling::Sum => {
                        let mut acc = vec![0.0f64; width];
                        for r in sets.range(i) {
                            for (a, v) in acc.iter_mut().zip(emb.row(r)) {
                                *a += v.as_f64();
                            }
                        }
                        for (o, a) in out.iter_mut().zip(acc) {
                            *o = T::of(a);
                        }
                    }
                    Pooling::Max => {
                        let arg = &mut argmax[i * width..(i + 1) * width];
                        for r in sets.range(i) {
                            for (f, v) in emb.row(r).iter().enumerate() {
                                if arg[f] == usize::MAX || *v > out[f] {
                                    out[f] = *v;
                                    arg[f] = r;
                                }
                            }
                        }
                    }
                }
            }
        }
        (Tensor::new(vec![b, width], pooled).expect("pool shape"), argmax)
    }

    pub fn forward(&self, sets: &SetBatch<T>) -> Result<Tensor<T>> {
        let embedded = sets.elements().map(|e| self.phi.forward(e)).transpose()?;
        let (pooled, _) = self.pool(embedded.as_ref(), sets);
        Ok(self.rho.forward(&pooled)?)
    }

    pub fn forward_train(&self, sets: &SetBatch<T>) -> Result<(Tensor<T>, DeepSetCache<T>)> {
        let (embedded, phi_cache) = match sets.elements() {
            Some(e) => {
                let (y, c) = self.phi.forward_train(e)?;
                (Some(y), Some(c))
            }
            None => (None, None),
        };
        let (pooled, argmax) = self.pool(embedded.as_ref(), sets);
        let (out, rho_cache) = self.rho.forward_train(&pooled)?;
        Ok((
            out,
            DeepSetCache {
                phi: phi_cache,
                rho: rho_cache,
                argmax,
                offsets: sets.offsets().to_vec(),
            },
        ))
    }

    /// Parameter gradients named as in [`Module::parameters`].
    pub fn backward(&self, cache: &DeepSetCache<T>, grad_out: &Tensor<T>) -> Result<ParameterSet<T>> {
        let (rho_grads, grad_pooled) = self.rho.backward(&cache.rho, grad_out)?;
        let width = self.phi.out_dim();
        let phi_grads = match &cache.phi {
            None => self.phi.parameters().zeros_like(),
            Some(phi_cache) => {
                let total = *cache.offsets.last().expect("offsets");
                let mut g = vec![T::zero(); total * width];
                for i in 0..cache.offsets.len() - 1 {
                    let gp = grad_pooled.row(i);
                    match self.pooling {
                        Pooling::Sum => {
                            for r in cache.offsets[i]..cache.offsets[i + 1] {
                                g[r * width..(r + 1) * width].copy_from_slice(gp);
                            }
                        }
                        Pooling::Max => {
                            for f in 0..width {
                                let r = cache.argmax[i * width + f];
                                if r != usize::MAX {
                                    g[r * width + f] += gp[f];
                                }
                            }
                        }
                    }
                }
                let g = Tensor::new(vec![total, width], g)?;
                self.phi.backward(phi_cache, &g)?.0
            }
        };
        let mut set = ParameterSet::new();
        set.extend_prefixed("phi.", phi_grads);
        set.extend_prefixed("rho.", rho_grads);
        Ok(set)
    }
}

impl<T: Scalar> Module<T> for DeepSetEncoder<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.phi.visit_params(&format!("{prefix}phi."), f);
        self.rho.visit_params(&format!("{prefix}rho."), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.phi.visit_params_mut(&format!("{prefix}phi."), f);
        self.rho.visit_params_mut(&format!("{prefix}rho."), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use setrl_nn::DenseLayer;

    fn identity(n: usize) -> DenseLayer<f64> {
        let mut w = vec![0.0; n * n];
        (0..n).for_each(|i| w[i * n + i] = 1.0);
        DenseLayer::from_parts(
            Tensor::new(vec![n, n], w).unwrap(),
            Tensor::zeros(&[n]),
            Activation::Relu,
        )
        .unwrap()
    }

    fn identity_encoder() -> DeepSetEncoder<f64> {
        let phi = Mlp::from_layers(vec![identity(3)]).unwrap();
        let rho = Mlp::from_layers(vec![identity(3)]).unwrap();
        DeepSetEncoder::from_parts(phi, rho, Pooling::Sum)
    }

    #[test]
    fn identity_phi_pools_elementwise_sum() {
        let enc = identity_encoder();
        let sets = SetBatch::from_sets(&[vec![[0.5, 0.0, 0.0], [0.25, 0.0, 0.0]]]);
        assert_eq!(enc.forward(&sets).unwrap().data(), &[0.75, 0.0, 0.0]);
    }

    #[test]
    fn empty_set_feeds_zeros_to_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = DeepSetEncoder::<f32>::new(3, &[20, 80], &[80, 20], Pooling::Sum, &mut rng);
        let empty = SetBatch::from_sets(&[vec![]]);
        let direct = enc.rho().forward(&Tensor::zeros(&[1, 80])).unwrap();
        assert_eq!(enc.forward(&empty).unwrap(), direct);
    }

    #[test]
    fn batch_rows_match_single_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = DeepSetEncoder::<f32>::new(3, &[20, 80], &[80, 20], Pooling::Sum, &mut rng);
        let a = vec![[0.1, 0.2, -1.0], [-0.4, 0.0, 0.0]];
        let b: Vec<[f32; 3]> = vec![];
        let c = vec![[0.9, -0.3, 1.0]];
        let all = enc
            .forward(&SetBatch::from_sets(&[a.clone(), b.clone(), c.clone()]))
            .unwrap();
        for (i, s) in [a, b, c].into_iter().enumerate() {
            let one = enc.forward(&SetBatch::from_sets(&[s])).unwrap();
            assert_eq!(one.data(), all.row(i));
        }
    }

    #[test]
    fn max_pooling_picks_largest() {
        let phi = Mlp::from_layers(vec![identity(3)]).unwrap();
        let rho = Mlp::from_layers(vec![identity(3)]).unwrap();
        let enc = DeepSetEncoder::from_parts(phi, rho, Pooling::Max);
        let sets = SetBatch::from_sets(&[vec![[0.5, 0.1, 0.0], [0.25, 0.3, 0.0]]]);
        assert_eq!(enc.forward(&sets).unwrap().data(), &[0.5, 0.3, 0.0]);
    }
}
