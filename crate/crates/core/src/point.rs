//! Primal-dual iterates and operator values.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A primal-dual point `z = (x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPair {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

impl PointPair {
    pub fn new(x: DVector<f64>, y: DVector<f64>) -> Result<Self> {
        let z = PointPair { x, y };
        if !z.is_finite() {
            return Err(Error::NonFinite("point"));
        }
        Ok(z)
    }

    pub fn from_slices(x: &[f64], y: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(x), DVector::from_column_slice(y))
    }

    pub fn zeros(dx: usize, dy: usize) -> Self {
        PointPair {
            x: DVector::zeros(dx),
            y: DVector::zeros(dy),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.x.len(), self.y.len())
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.x.norm_squared() + self.y.norm_squared()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist_sq(&self, other: &PointPair) -> f64 {
        (&self.x - &other.x).norm_squared() + (&self.y - &other.y).norm_squared()
    }

    /// `self + alpha * (dx, dy)`.
    pub fn offset(&self, alpha: f64, dx: &DVector<f64>, dy: &DVector<f64>) -> PointPair {
        PointPair {
            x: &self.x + dx * alpha,
            y: &self.y + dy * alpha,
        }
    }

    pub fn sub(&self, other: &PointPair) -> PointPair {
        PointPair {
            x: &self.x - &other.x,
            y: &self.y - &other.y,
        }
    }

    /// Concatenated `(x, y)` coordinates.
    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.x.len() + self.y.len(),
            self.x.iter().chain(self.y.iter()).copied(),
        )
    }

    pub(crate) fn check_dims(&self, dx: usize, dy: usize) -> Result<()> {
        if self.x.len() != dx || self.y.len() != dy {
            return Err(Error::DimensionMismatch {
                expected_x: dx,
                expected_y: dy,
                got_x: self.x.len(),
                got_y: self.y.len(),
            });
        }
        Ok(())
    }
}

/// Operator value `F(z) = (grad_x f, -grad_y f)`, or a stochastic estimate of it.
///
/// `calls` is the cumulative gradient-oracle count of the run at the moment the
/// value was produced; deterministic evaluations carry `0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldValue {
    pub gx: DVector<f64>,
    pub gy_neg: DVector<f64>,
    pub calls: u64,
}

impl FieldValue {
    pub fn norm_sq(&self) -> f64 {
        self.gx.norm_squared() + self.gy_neg.norm_squared()
    }

    pub fn is_finite(&self) -> bool {
        self.gx
            .iter()
            .chain(self.gy_neg.iter())
            .all(|v| v.is_finite())
    }
}

/// Per-run oracle accounting. Owned by the optimizer loop, never by a problem.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCounters {
    pub grad: u64,
    pub hvp: u64,
}
