//! Axis-aligned box domains in `(t, y_1, .., y_a)` space.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Open box `(t_lo, t_hi) x (lo_1, hi_1) x .. x (lo_a, hi_a)`.
///
/// Distances are measured in the l-infinity metric, so the distance from an
/// interior point to the boundary is simply the smallest face distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub t_lo: f64,
    pub t_hi: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Domain {
    pub fn new(t_lo: f64, t_hi: f64, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let d = Self { t_lo, t_hi, lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.lo.len(), self.hi.len())?;
        if self.lo.is_empty() {
            return Err(Error::InvalidSpec("domain needs at least one coordinate".into()));
        }
        if !(self.t_lo.is_finite() && self.t_hi.is_finite() && self.t_lo < self.t_hi) {
            return Err(Error::InvalidSpec(format!(
                "time range ({}, {}) must be finite and nonempty",
                self.t_lo, self.t_hi
            )));
        }
        for (k, (lo, hi)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidSpec(format!(
                    "coordinate {} range ({lo}, {hi}) must be finite and nonempty",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    /// Number of tracked coordinates `a` (the box lives in dimension `a + 1`).
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Signed l-infinity distance to the boundary. `point` is `(t, y_1, .., y_a)`.
    ///
    /// Positive strictly inside, zero on a face, negative outside.
    pub fn boundary_distance(&self, point: &[f64]) -> Result<f64> {
        check_dim(self.dim() + 1, point.len())?;
        Ok(self.distance_unchecked(point[0], &point[1..]))
    }

    /// Same as [`Domain::boundary_distance`] with time and state passed separately.
    pub fn distance_at(&self, t: f64, y: &[f64]) -> Result<f64> {
        check_dim(self.dim(), y.len())?;
        Ok(self.distance_unchecked(t, y))
    }

    pub(crate) fn distance_unchecked(&self, t: f64, y: &[f64]) -> f64 {
        let mut d = (t - self.t_lo).min(self.t_hi - t);
        for ((v, lo), hi) in y.iter().zip(&self.lo).zip(&self.hi) {
            d = d.min(v - lo).min(hi - v);
        }
        d
    }

    pub fn contains(&self, t: f64, y: &[f64]) -> bool {
        y.len() == self.dim() && self.distance_unchecked(t, y) > 0.0
    }

    /// Inclusive axis ranges `(lo, hi)` with time first.
    pub fn axes(&self) -> Vec<(f64, f64)> {
        std::iter::once((self.t_lo, self.t_hi))
            .chain(self.lo.iter().copied().zip(self.hi.iter().copied()))
            .collect()
    }
}
