//! Dense parameter vectors.
//!
//! All reductions in the crate go through the helpers here so that summation
//! order is fixed (ascending index, left to right). The bitwise equivalence
//! checks between aggregators depend on that.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// A dense `d`-dimensional vector of `f64`: model weights, client updates,
/// state-table entries and gradients all use this representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    /// Builds a vector, rejecting NaN and infinite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(ModelVector(values))
        } else {
            Err(SimError::NonFinite {
                context: "ModelVector::new",
            })
        }
    }

    pub fn zeros(dim: usize) -> Self {
        ModelVector(vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, v| acc + v * v)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &ModelVector) -> Result<f64> {
        check_dim(self.len(), other.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .fold(0.0, |acc, (a, b)| acc + a * b))
    }

    pub fn sub(&self, other: &ModelVector) -> Result<ModelVector> {
        check_dim(self.len(), other.len())?;
        Ok(ModelVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn add(&self, other: &ModelVector) -> Result<ModelVector> {
        check_dim(self.len(), other.len())?;
        Ok(ModelVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn scaled(&self, alpha: f64) -> ModelVector {
        ModelVector(self.0.iter().map(|v| alpha * v).collect())
    }

    pub fn divided(&self, denom: f64) -> ModelVector {
        ModelVector(self.0.iter().map(|v| v / denom).collect())
    }

    pub fn dist_sq(&self, other: &ModelVector) -> Result<f64> {
        check_dim(self.len(), other.len())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .fold(0.0, |acc, (a, b)| acc + (a - b) * (a - b)))
    }

    /// In-place `self += alpha * x`.
    pub fn axpy_in_place(&mut self, alpha: f64, x: &ModelVector) -> Result<()> {
        check_dim(self.len(), x.len())?;
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += alpha * v;
        }
        Ok(())
    }

    /// In-place `self += x`.
    pub fn add_in_place(&mut self, x: &ModelVector) -> Result<()> {
        check_dim(self.len(), x.len())?;
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += v;
        }
        Ok(())
    }
}

impl From<ModelVector> for Vec<f64> {
    fn from(v: ModelVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for ModelVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(SimError::Dimension { expected, got })
    }
}

/// Returns `y + alpha * x` without touching either input.
pub fn vec_axpy(alpha: f64, x: &ModelVector, y: &ModelVector) -> Result<ModelVector> {
    let mut out = y.clone();
    out.axpy_in_place(alpha, x)?;
    if !out.is_finite() {
        return Err(SimError::NonFinite {
            context: "vec_axpy",
        });
    }
    Ok(out)
}

/// Left-to-right sum of a non-empty sequence. The first element seeds the
/// accumulator, so a single-element sum reproduces its input bit for bit.
pub fn ordered_sum<'a, I>(items: I) -> Option<ModelVector>
where
    I: IntoIterator<Item = &'a ModelVector>,
{
    let mut iter = items.into_iter();
    let mut acc = iter.next()?.clone();
    for v in iter {
        assert_eq!(acc.len(), v.len(), "ordered_sum: dimension mismatch");
        acc.add_in_place(v).expect("dimensions checked");
    }
    Some(acc)
}

/// Arithmetic mean in iteration order: `ordered_sum / count`.
pub fn ordered_mean<'a, I>(items: I) -> Option<ModelVector>
where
    I: IntoIterator<Item = &'a ModelVector>,
{
    let mut count = 0usize;
    let sum = ordered_sum(items.into_iter().inspect(|_| count += 1))?;
    Some(sum.divided(count as f64))
}
