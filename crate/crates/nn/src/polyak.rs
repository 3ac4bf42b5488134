//! Soft (Polyak) target-network updates: `target <- tau * online + (1 - tau) * target`,
//! evaluated as `target + tau * (online - target)` so that repeated updates
//! never overshoot under rounding.

use crate::error::{NnError, Result};
use crate::params::{Module, ParameterSet};
use crate::scalar::Scalar;

pub fn soft_update<T: Scalar>(
    target: &mut ParameterSet<T>,
    online: &ParameterSet<T>,
    tau: f64,
) -> Result<()> {
    target.check_aligned(online)?;
    soft_update_module(target, online, tau)
}

/// Moves every tensor of `target` toward the matching tensor of `online`.
pub fn soft_update_module<T: Scalar>(
    target: &mut dyn Module<T>,
    online: &ParameterSet<T>,
    tau: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(NnError::InvalidTau(tau));
    }
    let a = T::of(tau);
    let src: Vec<_> = online.iter().collect();
    let mut idx = 0;
    let mut err = None;
    target.visit_params_mut("", &mut |name, t| {
        if err.is_some() {
            return;
        }
        match src.get(idx) {
            Some((n, o)) if *n == name && o.shape() == t.shape() => {
                if tau == 1.0 {
                    t.data_mut().copy_from_slice(o.data());
                } else if tau != 0.0 {
                    for (x, y) in t.data_mut().iter_mut().zip(o.data()) {
                        *x += a * (*y - *x);
                    }
                }
            }
            _ => err = Some(NnError::Misaligned(format!("target tensor {name}"))),
        }
        idx += 1;
    });
    if let Some(e) = err {
        return Err(e);
    }
    if idx != src.len() {
        return Err(NnError::Misaligned(format!("{idx} target vs {} online tensors", src.len())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one(v: f32) -> ParameterSet<f32> {
        let mut s = ParameterSet::new();
        s.push("w", Tensor::from_vec(vec![v, -v]));
        s
    }

    #[test]
    fn extremes() {
        let online = one(1.5);
        let mut t = one(-0.25);
        soft_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t, one(-0.25));
        soft_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t, online);
    }

    #[test]
    fn small_tau_step() {
        let mut t = one(0.0);
        soft_update(&mut t, &one(1.0), 1e-4).unwrap();
        assert_eq!(t.get("w").unwrap().data()[0], 1e-4f32);
    }

    #[test]
    fn tau_outside_unit_interval() {
        let mut t = one(0.0);
        assert!(matches!(soft_update(&mut t, &one(1.0), 1.5), Err(NnError::InvalidTau(_))));
        assert!(soft_update(&mut t, &one(1.0), -0.1).is_err());
    }
}
