//! Set2Set encoder: an LSTM query attends over the set for a fixed number
//! of iterations; the final `[q, beta]` state goes through a dense readout.
//!
//! The query lives in the LSTM's hidden space while elements have three
//! features, so a learned linear map projects `q_k` to element space before
//! the dot-product attention `e_j = x_j . (W q_k + b)`.

use rand::Rng;
use setrl_nn::{
    Activation, DenseCache, DenseLayer, LstmCell, LstmGrads, LstmStepCache, Module, ParameterSet,
    Scalar, Tensor,
};

use super::SetBatch;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Set2SetEncoder<T = f32> {
    lstm: Vec<LstmCell<T>>,
    query: DenseLayer<T>,
    readout: DenseLayer<T>,
    iterations: usize,
}

#[derive(Debug, Clone)]
struct IterationCache<T> {
    lstm: Vec<LstmStepCache<T>>,
    query: DenseCache<T>,
    /// Attention weight per element row.
    alpha: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Set2SetCache<T = f32> {
    iterations: Vec<IterationCache<T>>,
    readout: DenseCache<T>,
    sets: SetBatch<T>,
}

/// Softmax in `f64`, max-shifted.
pub fn softmax(e: &[f64]) -> Vec<f64> {
    let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = e.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = ex.iter().sum();
    ex.into_iter().map(|v| v / s).collect()
}

impl<T: Scalar> Set2SetEncoder<T> {
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        layers: usize,
        readout: usize,
        iterations: usize,
        rng: &mut R,
    ) -> Self {
        assert!(layers >= 1 && iterations >= 1, "need at least one layer and one iteration");
        let mut lstm = vec![LstmCell::new(hidden + input, hidden, rng)];
        for _ in 1..layers {
            lstm.push(LstmCell::new(hidden, hidden, rng));
        }
        Self {
            lstm,
            query: DenseLayer::new(hidden, input, Activation::Linear, rng),
            readout: DenseLayer::new(hidden + input, readout, Activation::Relu, rng),
            iterations,
        }
    }

    pub fn hidden(&self) -> usize {
        self.lstm[0].hidden()
    }

    pub fn input(&self) -> usize {
        self.query.out_dim()
    }

    pub fn layers(&self) -> usize {
        self.lstm.len()
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn out_dim(&self) -> usize {
        self.readout.out_dim()
    }

    pub fn cast<U: Scalar>(&self) -> Set2SetEncoder<U> {
        Set2SetEncoder {
            lstm: self.lstm.iter().map(LstmCell::cast).collect(),
            query: self.query.cast(),
            readout: self.readout.cast(),
            iterations: self.iterations,
        }
    }

    /// Attention readout for every sample; returns `beta [b x width]` and the
    /// per-row weights.
    fn attend(&self, sets: &SetBatch<T>, u: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
        let width = self.input();
        let b = sets.batch();
        let total = *sets.offsets().last().unwrap();
        let mut beta = vec![T::zero(); b * width];
        let mut alpha = vec![T::zero(); total];
        for i in 0..b {
            let range = sets.range(i);
            if range.is_empty() {
                continue;
            }
            let ui = u.row(i);
            let e: Vec<f64> = range
                .clone()
                .map(|r| {
                    sets.element(r)
                        .iter()
                        .zip(ui)
                        .map(|(x, q)| x.as_f64() * q.as_f64())
                        .sum()
                })
                .collect();
            let a = softmax(&e);
            let mut acc = vec![0.0f64; width];
            for (r, ar) in range.clone().zip(&a) {
                for (s, x) in acc.iter_mut().zip(sets.element(r)) {
                    *s += ar * x.as_f64();
                }
                alpha[r] = T::of(*ar);
            }
            for (o, s) in beta[i * width..(i + 1) * width].iter_mut().zip(acc) {
                *o = T::of(s);
            }
        }
        (Tensor::new(vec![b, width], beta).expect("beta shape"), alpha)
    }

    /// Runs the K iterations and returns `q*_K` with rows of empty sets zeroed.
    fn unroll(
        &self,
        sets: &SetBatch<T>,
        mut caches: Option<&mut Vec<IterationCache<T>>>,
    ) -> Result<Tensor<T>> {
        if sets.width() != self.input() {
            return Err(CoreError::Dimension(format!(
                "set2set expects {} features per element, got {}",
                self.input(),
                sets.width()
            )));
        }
        let b = sets.batch();
        let h = self.hidden();
        let zeros = Tensor::zeros(&[b, h]);
        let mut state: Vec<(Tensor<T>, Tensor<T>)> =
            vec![(zeros.clone(), zeros.clone()); self.lstm.len()];
        let mut qstar = Tensor::zeros(&[b, h + self.input()]);
        for _ in 0..self.iterations {
            let mut x = qstar;
            let mut step_caches = Vec::with_capacity(self.lstm.len());
            for (cell, (hs, cs)) in self.lstm.iter().zip(state.iter_mut()) {
                let (hn, cn) = if caches.is_some() {
                    let (hn, cn, c) = cell.step_train(&x, hs, cs)?;
                    step_caches.push(c);
                    (hn, cn)
                } else {
                    cell.step(&x, hs, cs)?
                };
                *hs = hn.clone();
                *cs = cn;
                x = hn;
            }
            let q = x;
            let (u, query_cache) = self.query.forward_train(&q)?;
            let (beta, alpha) = self.attend(sets, &u);
            qstar = setrl_nn::concat_cols(&[&q, &beta])?;
            if let Some(c) = caches.as_deref_mut() {
                c.push(IterationCache {
                    lstm: step_caches,
                    query: query_cache,
                    alpha,
                });
            }
        }
        for i in 0..b {
            if sets.set_len(i) == 0 {
                qstar.row_mut(i).iter_mut().for_each(|v| *v = T::zero());
            }
        }
        Ok(qstar)
    }

    /// `q*_K` before the readout layer.
    pub fn final_state(&self, sets: &SetBatch<T>) -> Result<Tensor<T>> {
        self.unroll(sets, None)
    }

    pub fn forward(&self, sets: &SetBatch<T>) -> Result<Tensor<T>> {
        let qstar = self.unroll(sets, None)?;
        Ok(self.readout.forward(&qstar)?)
    }

    pub fn forward_train(&self, sets: &SetBatch<T>) -> Result<(Tensor<T>, Set2SetCache<T>)> {
        let mut iterations = Vec::with_capacity(self.iterations);
        let qstar = self.unroll(sets, Some(&mut iterations))?;
        let (out, readout) = self.readout.forward_train(&qstar)?;
        Ok((
            out,
            Set2SetCache {
                iterations,
                readout,
                sets: sets.clone(),
            },
        ))
    }

    pub fn backward(&self, cache: &Set2SetCache<T>, grad_out: &Tensor<T>) -> Result<ParameterSet<T>> {
        if cache.iterations.len() != self.iterations {
            return Err(CoreError::Nn(setrl_nn::NnError::CacheMismatch("set2set iterations")));
        }
        let sets = &cache.sets;
        let (b, h, width) = (sets.batch(), self.hidden(), self.input());
        let ro = self.readout.backward(&cache.readout, grad_out)?;
        let mut g_qstar = ro.input;
        for i in 0..b {
            if sets.set_len(i) == 0 {
                g_qstar.row_mut(i).iter_mut().for_each(|v| *v = T::zero());
            }
        }

        let mut lstm_grads: Vec<LstmGrads<T>> = self.lstm.iter().map(LstmGrads::zeros).collect();
        let mut query_w = Tensor::zeros(self.query.weight().shape());
        let mut query_b = Tensor::zeros(self.query.bias().shape());
        let zeros = Tensor::zeros(&[b, h]);
        let mut gh_rec = vec![zeros.clone(); self.lstm.len()];
        let mut gc_rec = vec![zeros; self.lstm.len()];

        for it in cache.iterations.iter().rev() {
            let parts = setrl_nn::split_cols(&g_qstar, &[h, width])?;
            let (mut gq, gbeta) = (parts[0].clone(), &parts[1]);

            let mut gu = vec![T::zero(); b * width];
            for i in 0..b {
                let range = sets.range(i);
                if range.is_empty() {
                    continue;
                }
                let gb = gbeta.row(i);
                let galpha: Vec<f64> = range
                    .clone()
                    .map(|r| {
                        sets.element(r)
                            .iter()
                            .zip(gb)
                            .map(|(x, g)| x.as_f64() * g.as_f64())
                            .sum()
                    })
                    .collect();
                let s: f64 = range
                    .clone()
                    .zip(&galpha)
                    .map(|(r, ga)| it.alpha[r].as_f64() * ga)
                    .sum();
                let mut acc = vec![0.0f64; width];
                for (r, ga) in range.zip(&galpha) {
                    let ge = it.alpha[r].as_f64() * (ga - s);
                    for (a, x) in acc.iter_mut().zip(sets.element(r)) {
                        *a += ge * x.as_f64();
                    }
                }
                for (o, a) in gu[i * width..(i + 1) * width].iter_mut().zip(acc) {
                    *o = T::of(a);
                }
            }
            let qg = self
                .query
                .backward(&it.query, &Tensor::new(vec![b, width], gu)?)?;
            add_into(&mut query_w, &qg.weight);
            add_into(&mut query_b, &qg.bias);
            add_into(&mut gq, &qg.input);

            let mut grad_h = gq;
            add_into(&mut grad_h, &gh_rec[self.lstm.len() - 1]);
            for l in (0..self.lstm.len()).rev() {
                let (gx, gh, gc) =
                    self.lstm[l].backward_step(&it.lstm[l], &grad_h, &gc_rec[l], &mut lstm_grads[l])?;
                gh_rec[l] = gh;
                gc_rec[l] = gc;
                if l > 0 {
                    grad_h = gx;
                    add_into(&mut grad_h, &gh_rec[l - 1]);
                } else {
                    g_qstar = gx;
                }
            }
        }

        let mut set = ParameterSet::new();
        for (l, g) in lstm_grads.into_iter().enumerate() {
            set.extend_prefixed(&format!("lstm.{l}."), g.into_parameter_set(""));
        }
        set.push("query.weight", query_w);
        set.push("query.bias", query_b);
        set.push("readout.weight", ro.weight);
        set.push("readout.bias", ro.bias);
        Ok(set)
    }
}

fn add_into<T: Scalar>(acc: &mut Tensor<T>, g: &Tensor<T>) {
    for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += *v;
    }
}

impl<T: Scalar> Module<T> for Set2SetEncoder<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        for (l, c) in self.lstm.iter().enumerate() {
            c.visit_params(&format!("{prefix}lstm.{l}."), f);
        }
        self.query.visit_params(&format!("{prefix}query."), f);
        self.readout.visit_params(&format!("{prefix}readout."), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (l, c) in self.lstm.iter_mut().enumerate() {
            c.visit_params_mut(&format!("{prefix}lstm.{l}."), f);
        }
        self.query.visit_params_mut(&format!("{prefix}query."), f);
        self.readout.visit_params_mut(&format!("{prefix}readout."), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(seed: u64) -> Set2SetEncoder<f64> {
        Set2SetEncoder::new(3, 6, 1, 32, 5, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn softmax_of_zero_and_ln3() {
        let a = softmax(&[0.0, 3f64.ln()]);
        assert!((a[0] - 0.25).abs() < 1e-15 && (a[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn singleton_readout_is_the_element() {
        let enc = encoder(1);
        let x = [0.3, -0.2, 1.0];
        let q = enc.final_state(&SetBatch::from_sets(&[vec![x]])).unwrap();
        assert_eq!(&q.row(0)[6..], &x);
    }

    #[test]
    fn identical_elements_share_attention() {
        let enc = encoder(2);
        let x = [0.3, -0.2, 1.0];
        let sets = SetBatch::from_sets(&[vec![x, x]]);
        let (_, cache) = enc.forward_train(&sets).unwrap();
        for it in &cache.iterations {
            assert_eq!(it.alpha, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn empty_set_zero_state() {
        let enc = encoder(3);
        let sets = SetBatch::from_sets(&[vec![], vec![[0.1, 0.1, 0.0]]]);
        let q = enc.final_state(&sets).unwrap();
        assert!(q.row(0).iter().all(|v| *v == 0.0));
        assert!(q.row(1).iter().any(|v| *v != 0.0));
        let out = enc.forward(&SetBatch::from_sets(&[vec![]])).unwrap();
        let expected: Vec<f64> = enc.readout.bias().data().iter().map(|b| b.max(0.0)).collect();
        assert_eq!(out.data(), &expected[..]);
    }
}
