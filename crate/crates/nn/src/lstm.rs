//! Single LSTM cell with backpropagation through time support.
//!
//! Gate rows in the stacked weight matrices are ordered
//! `[input, forget, cell candidate, output]`, each block `hidden` rows tall.

use rand::Rng;

use crate::dense::uniform_init;
use crate::error::{NnError, Result};
use crate::params::Module;
use crate::scalar::{gemm, Scalar, View};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell<T = f32> {
    w_ih: Tensor<T>,
    w_hh: Tensor<T>,
    bias: Tensor<T>,
    hidden: usize,
}

/// Forward state of one step.
#[derive(Debug, Clone)]
pub struct LstmStepCache<T = f32> {
    x: Tensor<T>,
    h: Tensor<T>,
    c: Tensor<T>,
    /// Post-nonlinearity gates `[batch x 4h]`.
    gates: Vec<T>,
    tanh_c: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct LstmGrads<T = f32> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LstmGrads<T> {
    pub fn zeros(cell: &LstmCell<T>) -> Self {
        Self {
            w_ih: Tensor::zeros(cell.w_ih.shape()),
            w_hh: Tensor::zeros(cell.w_hh.shape()),
            bias: Tensor::zeros(cell.bias.shape()),
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> LstmCell<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let g = 4 * hidden;
        Self {
            w_ih: Tensor::new(vec![g, input], uniform_init(g * input, hidden, rng)).expect("dims"),
            w_hh: Tensor::new(vec![g, hidden], uniform_init(g * hidden, hidden, rng)).expect("dims"),
            bias: Tensor::new(vec![g], uniform_init(g, hidden, rng)).expect("dims"),
            hidden,
        }
    }

    pub fn from_parts(w_ih: Tensor<T>, w_hh: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let g = bias.len();
        if !g.is_multiple_of(4) || bias.shape().len() != 1 {
            return Err(NnError::InvalidShape {
                shape: bias.shape().to_vec(),
                len: g,
            });
        }
        let hidden = g / 4;
        w_hh.expect_shape(&[g, hidden], "lstm recurrent weights")?;
        if w_ih.shape().len() != 2 || w_ih.shape()[0] != g {
            return Err(NnError::ShapeMismatch {
                context: "lstm input weights",
                expected: vec![g, 0],
                found: w_ih.shape().to_vec(),
            });
        }
        Ok(Self {
            w_ih,
            w_hh,
            bias,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.w_ih.shape()[1]
    }

    pub fn cast<U: Scalar>(&self) -> LstmCell<U> {
        LstmCell {
            w_ih: self.w_ih.cast(),
            w_hh: self.w_hh.cast(),
            bias: self.bias.cast(),
            hidden: self.hidden,
        }
    }

    fn check(&self, x: &Tensor<T>, h: &Tensor<T>, c: &Tensor<T>) -> Result<()> {
        let b = x.rows();
        x.expect_shape(&[b, self.input()], "lstm input")?;
        h.expect_shape(&[b, self.hidden], "lstm hidden")?;
        c.expect_shape(&[b, self.hidden], "lstm cell")?;
        Ok(())
    }

    fn gates(&self, x: &Tensor<T>, h: &Tensor<T>) -> Vec<T> {
        let (b, n_in, hd) = (x.rows(), self.input(), self.hidden);
        let g = 4 * hd;
        let mut out = Vec::with_capacity(b * g);
        for _ in 0..b {
            out.extend_from_slice(self.bias.data());
        }
        gemm(
            View::new(x.data(), b, n_in),
            View::new(self.w_ih.data(), g, n_in).t(),
            T::one(),
            &mut out,
        );
        gemm(
            View::new(h.data(), b, hd),
            View::new(self.w_hh.data(), g, hd).t(),
            T::one(),
            &mut out,
        );
        for row in out.chunks_exact_mut(g) {
            for (k, z) in row.iter_mut().enumerate() {
                *z = if (2 * hd..3 * hd).contains(&k) {
                    z.tanh()
                } else {
                    sigmoid(*z)
                };
            }
        }
        out
    }

    fn advance(&self, gates: &[T], c: &Tensor<T>) -> (Vec<T>, Vec<T>, Vec<T>) {
        let hd = self.hidden;
        let b = c.rows();
        let mut h_new = Vec::with_capacity(b * hd);
        let mut c_new = Vec::with_capacity(b * hd);
        let mut tanh_c = Vec::with_capacity(b * hd);
        for r in 0..b {
            let gr = &gates[r * 4 * hd..(r + 1) * 4 * hd];
            let cr = c.row(r);
            for j in 0..hd {
                let (i, f, g, o) = (gr[j], gr[hd + j], gr[2 * hd + j], gr[3 * hd + j]);
                let cn = f * cr[j] + i * g;
                let tc = cn.tanh();
                c_new.push(cn);
                tanh_c.push(tc);
                h_new.push(o * tc);
            }
        }
        (h_new, c_new, tanh_c)
    }

    /// One step: returns `(hidden', cell')`.
    pub fn step(&self, x: &Tensor<T>, h: &Tensor<T>, c: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        self.check(x, h, c)?;
        let gates = self.gates(x, h);
        let (hn, cn, _) = self.advance(&gates, c);
        let shape = vec![x.rows(), self.hidden];
        Ok((Tensor::new(shape.clone(), hn)?, Tensor::new(shape, cn)?))
    }

    pub fn step_train(
        &self,
        x: &Tensor<T>,
        h: &Tensor<T>,
        c: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, LstmStepCache<T>)> {
        self.check(x, h, c)?;
        let gates = self.gates(x, h);
        let (hn, cn, tanh_c) = self.advance(&gates, c);
        let shape = vec![x.rows(), self.hidden];
        Ok((
            Tensor::new(shape.clone(), hn)?,
            Tensor::new(shape, cn)?,
            LstmStepCache {
                x: x.clone(),
                h: h.clone(),
                c: c.clone(),
                gates,
                tanh_c,
            },
        ))
    }

    /// Backward through one step given gradients of the step outputs.
    /// Accumulates parameter gradients into `grads` and returns
    /// `(grad_x, grad_h, grad_c)` for the step inputs.
    pub fn backward_step(
        &self,
        cache: &LstmStepCache<T>,
        grad_h: &Tensor<T>,
        grad_c: &Tensor<T>,
        grads: &mut LstmGrads<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let (b, hd, n_in) = (cache.x.rows(), self.hidden, self.input());
        if grad_h.shape() != [b, hd] || grad_c.shape() != [b, hd] {
            return Err(NnError::CacheMismatch("lstm step"));
        }
        let g4 = 4 * hd;
        let mut gx = vec![T::zero(); b * n_in];
        let mut gh = vec![T::zero(); b * hd];
        let mut gc = vec![T::zero(); b * hd];
        let mut da = vec![T::zero(); b * g4];
        let one = T::one();
        for r in 0..b {
            let gates = &cache.gates[r * g4..(r + 1) * g4];
            let (dh, dcn) = (grad_h.row(r), grad_c.row(r));
            let cprev = cache.c.row(r);
            let dar = &mut da[r * g4..(r + 1) * g4];
            for j in 0..hd {
                let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
                let tc = cache.tanh_c[r * hd + j];
                let dc = dcn[j] + dh[j] * o * (one - tc * tc);
                let d_o = dh[j] * tc;
                let d_i = dc * g;
                let d_g = dc * i;
                let d_f = dc * cprev[j];
                gc[r * hd + j] = dc * f;
                dar[j] = d_i * i * (one - i);
                dar[hd + j] = d_f * f * (one - f);
                dar[2 * hd + j] = d_g * (one - g * g);
                dar[3 * hd + j] = d_o * o * (one - o);
            }
            for (gb, d) in grads.bias.data_mut().iter_mut().zip(dar.iter()) {
                *gb += *d;
            }
        }
        let dav = View::new(&da, b, g4);
        gemm(dav.t(), View::new(cache.x.data(), b, n_in), one, grads.w_ih.data_mut());
        gemm(dav.t(), View::new(cache.h.data(), b, hd), one, grads.w_hh.data_mut());
        gemm(dav, View::new(self.w_ih.data(), g4, n_in), T::zero(), &mut gx);
        gemm(dav, View::new(self.w_hh.data(), g4, hd), T::zero(), &mut gh);
        Ok((
            Tensor::new(vec![b, n_in], gx)?,
            Tensor::new(vec![b, hd], gh)?,
            Tensor::new(vec![b, hd], gc)?,
        ))
    }
}

impl<T: Scalar> Module<T> for LstmCell<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(format!("{prefix}w_ih"), &self.w_ih);
        f(format!("{prefix}w_hh"), &self.w_hh);
        f(format!("{prefix}bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(format!("{prefix}w_ih"), &mut self.w_ih);
        f(format!("{prefix}w_hh"), &mut self.w_hh);
        f(format!("{prefix}bias"), &mut self.bias);
    }
}

impl<T: Scalar> LstmGrads<T> {
    pub fn into_parameter_set(self, prefix: &str) -> crate::params::ParameterSet<T> {
        let mut s = crate::params::ParameterSet::new();
        s.push(format!("{prefix}w_ih"), self.w_ih);
        s.push(format!("{prefix}w_hh"), self.w_hh);
        s.push(format!("{prefix}bias"), self.bias);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_cell(input: usize, hidden: usize) -> LstmCell<f64> {
        LstmCell::from_parts(
            Tensor::zeros(&[4 * hidden, input]),
            Tensor::zeros(&[4 * hidden, hidden]),
            Tensor::zeros(&[4 * hidden]),
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_zero_state_stay_zero() {
        let cell = zero_cell(3, 6);
        let x = Tensor::new(vec![1, 3], vec![0.7, -2.0, 5.0]).unwrap();
        let z = Tensor::zeros(&[1, 6]);
        let (h, c) = cell.step(&x, &z, &z).unwrap();
        assert!(h.data().iter().all(|v| *v == 0.0));
        assert!(c.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let hd = 2;
        let mut bias = vec![0.0; 4 * hd];
        bias[hd..2 * hd].iter_mut().for_each(|b| *b = 20.0);
        // input gate closed so the candidate cannot leak in
        bias[..hd].iter_mut().for_each(|b| *b = -20.0);
        let cell = LstmCell::from_parts(
            Tensor::zeros(&[4 * hd, 3]),
            Tensor::zeros(&[4 * hd, hd]),
            Tensor::from_vec(bias),
        )
        .unwrap();
        let x = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let h = Tensor::zeros(&[1, hd]);
        let c = Tensor::new(vec![1, hd], vec![0.4, -1.3]).unwrap();
        let (_, c2) = cell.step(&x, &h, &c).unwrap();
        for (a, b) in c2.data().iter().zip(c.data()) {
            assert!(((*a - *b) as f64).abs() < 1e-7);
        }
    }

    #[test]
    fn size_mismatch_is_error() {
        let cell = zero_cell(3, 6);
        let x = Tensor::zeros(&[1, 4]);
        let z = Tensor::zeros(&[1, 6]);
        assert!(cell.step(&x, &z, &z).is_err());
    }
}
