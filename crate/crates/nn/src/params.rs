//! Named parameter collections and the [`Module`] visitor trait that ties
//! layers to optimizers, target-network updates and checkpoints.

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Anything that owns trainable tensors. Visit order must be stable: it
/// defines the order of gradients, optimizer state and checkpoint records.
pub trait Module<T: Scalar> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>));

    fn parameters(&self) -> ParameterSet<T> {
        let mut set = ParameterSet::new();
        self.visit_params("", &mut |name, t| set.push(name, t.clone()));
        set
    }

    /// Overwrites this module's tensors with `params`, matched by position
    /// and checked by name and shape.
    fn load_parameters(&mut self, params: &ParameterSet<T>) -> Result<()> {
        let mut idx = 0;
        let mut err = None;
        self.visit_params_mut("", &mut |name, t| {
            if err.is_some() {
                return;
            }
            match params.entries.get(idx) {
                Some((n, src)) if *n == name && src.shape() == t.shape() => {
                    t.data_mut().copy_from_slice(src.data());
                }
                Some((n, src)) => {
                    err = Some(NnError::Misaligned(format!(
                        "slot {idx}: module has {name} {:?}, set has {n} {:?}",
                        t.shape(),
                        src.shape()
                    )))
                }
                None => err = Some(NnError::Misaligned(format!("set too short at {name}"))),
            }
            idx += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if idx != params.len() {
            return Err(NnError::Misaligned(format!(
                "module has {idx} tensors, set has {}",
                params.len()
            )));
        }
        Ok(())
    }

    fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, t| n += t.len());
        n
    }
}

/// Ordered, uniquely named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T = f32> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Default for ParameterSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    /// Appends a tensor. Panics on duplicate names.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        let name = name.into();
        assert!(self.get(&name).is_none(), "duplicate parameter name {name}");
        self.entries.push((name, tensor));
    }

    /// Appends every entry of `other` with `prefix` prepended to its name.
    pub fn extend_prefixed(&mut self, prefix: &str, other: ParameterSet<T>) {
        for (n, t) in other.entries {
            self.push(format!("{prefix}{n}"), t);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// Checks that `other` has the same names and shapes in the same order.
    pub fn check_aligned(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(NnError::Misaligned(format!(
                "{} vs {} tensors",
                self.len(),
                other.len()
            )));
        }
        for ((a, ta), (b, tb)) in self.entries.iter().zip(&other.entries) {
            if a != b || ta.shape() != tb.shape() {
                return Err(NnError::Misaligned(format!(
                    "{a} {:?} vs {b} {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_aligned(other)?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += *y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for (_, t) in &mut self.entries {
            for x in t.data_mut() {
                *x *= factor;
            }
        }
    }

    pub fn max_abs(&self) -> T {
        self.entries
            .iter()
            .fold(T::zero(), |m, (_, t)| m.max(t.max_abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }

    /// Flat view of coordinate `index` across all tensors in order.
    pub fn flat_get(&self, mut index: usize) -> Option<(&str, T)> {
        for (n, t) in &self.entries {
            if index < t.len() {
                return Some((n, t.data()[index]));
            }
            index -= t.len();
        }
        None
    }
}

impl<T: Scalar> Module<T> for ParameterSet<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        for (n, t) in &self.entries {
            f(format!("{prefix}{n}"), t);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (n, t) in &mut self.entries {
            f(format!("{prefix}{n}"), t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(vals: &[(&str, f32)]) -> ParameterSet<f32> {
        let mut s = ParameterSet::new();
        for (n, v) in vals {
            s.push(*n, Tensor::from_vec(vec![*v, *v]));
        }
        s
    }

    #[test]
    fn alignment_detects_name_change() {
        let a = set(&[("a", 1.0), ("b", 2.0)]);
        let b = set(&[("a", 1.0), ("c", 2.0)]);
        assert!(a.check_aligned(&b).is_err());
        assert!(a.check_aligned(&a.zeros_like()).is_ok());
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_rejected() {
        set(&[("a", 1.0), ("a", 2.0)]);
    }

    #[test]
    fn load_round_trip() {
        let src = set(&[("a", 1.0), ("b", 2.0)]);
        let mut dst = src.zeros_like();
        dst.load_parameters(&src).unwrap();
        assert_eq!(dst, src);
        let wrong = set(&[("a", 1.0)]);
        assert!(dst.load_parameters(&wrong).is_err());
    }

    #[test]
    fn flat_indexing_spans_tensors() {
        let s = set(&[("a", 1.0), ("b", 2.0)]);
        assert_eq!(s.flat_get(3), Some(("b", 2.0)));
        assert_eq!(s.flat_get(4), None);
    }
}
