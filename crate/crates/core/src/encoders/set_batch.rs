use setrl_nn::{Scalar, Tensor};

use crate::error::{CoreError, Result};

/// Variable-length sets of a batch, stored as one `[total x width]` tensor
/// of stacked elements plus per-sample row offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct SetBatch<T = f32> {
    elements: Option<Tensor<T>>,
    offsets: Vec<usize>,
    width: usize,
}

impl<T: Scalar> SetBatch<T> {
    pub fn from_sets(sets: &[Vec<[T; 3]>]) -> Self {
        let mut offsets = Vec::with_capacity(sets.len() + 1);
        offsets.push(0);
        let mut data = Vec::new();
        for s in sets {
            for e in s {
                data.extend_from_slice(e);
            }
            offsets.push(offsets.last().unwrap() + s.len());
        }
        let total = *offsets.last().unwrap();
        let elements = (total > 0).then(|| Tensor::new(vec![total, 3], data).expect("set shape"));
        Self {
            elements,
            offsets,
            width: 3,
        }
    }

    pub fn from_parts(elements: Option<Tensor<T>>, offsets: Vec<usize>) -> Result<Self> {
        let total = elements.as_ref().map_or(0, |e| e.rows());
        let width = elements.as_ref().map_or(3, |e| e.row_len());
        let ok = offsets.first() == Some(&0)
            && offsets.windows(2).all(|w| w[0] <= w[1])
            && offsets.last() == Some(&total);
        if !ok {
            return Err(CoreError::Dimension(format!(
                "set offsets {offsets:?} do not cover {total} elements"
            )));
        }
        Ok(Self {
            elements,
            offsets,
            width,
        })
    }

    pub fn batch(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn elements(&self) -> Option<&Tensor<T>> {
        self.elements.as_ref()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Element row range of sample `i`.
    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn set_len(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn element(&self, row: usize) -> &[T] {
        self.elements.as_ref().expect("non-empty batch").row(row)
    }

    pub fn cast<U: Scalar>(&self) -> SetBatch<U> {
        SetBatch {
            elements: self.elements.as_ref().map(Tensor::cast),
            offsets: self.offsets.clone(),
            width: self.width,
        }
    }
}
