//! Bias-corrected Adam.

use crate::error::{NnError, Result};
use crate::params::{Module, ParameterSet};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Moment estimates live in a [`ParameterSet`] mirroring the parameters, so
/// misaligned gradients are caught by name and shape.
#[derive(Debug, Clone)]
pub struct Adam<T = f32> {
    pub config: AdamConfig,
    step: u64,
    m: Option<ParameterSet<T>>,
    v: Option<ParameterSet<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: None,
            v: None,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    fn prepare(&mut self, grads: &ParameterSet<T>) -> Result<(T, T)> {
        match &self.m {
            Some(m) => m.check_aligned(grads)?,
            None => {
                self.m = Some(grads.zeros_like());
                self.v = Some(grads.zeros_like());
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.config.beta1.powi(t);
        let c2 = 1.0 - self.config.beta2.powi(t);
        Ok((T::of(c1), T::of(c2)))
    }

    fn update(&self, c: (T, T), m: &mut [T], v: &mut [T], p: &mut [T], g: &[T]) {
        let (b1, b2) = (T::of(self.config.beta1), T::of(self.config.beta2));
        let (lr, eps) = (T::of(self.config.lr), T::of(self.config.eps));
        let one = T::one();
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / c.0;
            let v_hat = v[i] / c.1;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }

    /// One update of `params` against `grads`.
    pub fn step(&mut self, params: &mut ParameterSet<T>, grads: &ParameterSet<T>) -> Result<()> {
        params.check_aligned(grads)?;
        self.step_module(params, grads)
    }

    /// Same as [`Adam::step`] but writes straight into a module's tensors.
    pub fn step_module(&mut self, module: &mut dyn Module<T>, grads: &ParameterSet<T>) -> Result<()> {
        let c = self.prepare(grads)?;
        let mut m = self.m.take().expect("initialized");
        let mut v = self.v.take().expect("initialized");
        let mut idx = 0;
        let mut err = None;
        {
            let mut ms: Vec<_> = m.iter_mut().map(|(_, t)| t).collect();
            let mut vs: Vec<_> = v.iter_mut().map(|(_, t)| t).collect();
            let gs: Vec<_> = grads.iter().collect();
            module.visit_params_mut("", &mut |name, p| {
                if err.is_some() {
                    return;
                }
                let Some((gname, g)) = gs.get(idx) else {
                    err = Some(NnError::Misaligned(format!("no gradient for {name}")));
                    return;
                };
                if *gname != name || g.shape() != p.shape() {
                    err = Some(NnError::Misaligned(format!("{name} vs gradient {gname}")));
                    return;
                }
                self.update(c, ms[idx].data_mut(), vs[idx].data_mut(), p.data_mut(), g.data());
                idx += 1;
            });
        }
        self.m = Some(m);
        self.v = Some(v);
        if let Some(e) = err {
            return Err(e);
        }
        if idx != grads.len() {
            return Err(NnError::Misaligned(format!(
                "{} gradients for {idx} parameters",
                grads.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_set(vals: &[(&str, f64)]) -> ParameterSet<f64> {
        let mut s = ParameterSet::new();
        for (n, v) in vals {
            s.push(*n, Tensor::from_vec(vec![*v]));
        }
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_set(&[("w", 0.0)]);
        let g = scalar_set(&[("w", 1.0)]);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut p, &g).unwrap();
        let w = p.get("w").unwrap().data()[0];
        // m_hat = v_hat = 1 so the step is lr / (1 + eps)
        assert!((w + 1e-4 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_noop_but_counts() {
        let mut p = scalar_set(&[("w", 0.25)]);
        let g = scalar_set(&[("w", 0.0)]);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut p, &g).unwrap();
        assert_eq!(p.get("w").unwrap().data()[0], 0.25);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn opposite_gradients_symmetric() {
        let mut p = scalar_set(&[("a", 0.0), ("b", 0.0)]);
        let g = scalar_set(&[("a", 3.0), ("b", -3.0)]);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut p, &g).unwrap();
        let (a, b) = (p.get("a").unwrap().data()[0], p.get("b").unwrap().data()[0]);
        assert_eq!(a, -b);
        assert!((a + 1e-4).abs() < 1e-11);
    }

    #[test]
    fn misaligned_names_rejected() {
        let mut p = scalar_set(&[("a", 0.0)]);
        let g = scalar_set(&[("b", 1.0)]);
        let mut adam = Adam::new(AdamConfig::default());
        assert!(matches!(adam.step(&mut p, &g), Err(NnError::Misaligned(_))));
    }
}
