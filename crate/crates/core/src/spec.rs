//! The problem instance: drift, constants, initial anchor and domain.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{check_dim, Error, Result};
use crate::model::DriftModel;

pub const SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

/// A full instance of the differential equation method.
///
/// All rescaled quantities (`y_hat`, `domain`, `lambda`) are in units of
/// `Y / n`; `beta`, `b`, `big_b` and `x` are in raw count units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSpec {
    #[serde(default = "schema_version")]
    pub schema: u32,
    pub a: usize,
    pub n: u64,
    pub drift: DriftModel,
    #[serde(rename = "L")]
    pub lipschitz: f64,
    pub delta: f64,
    pub beta: f64,
    pub lambda: f64,
    pub y_hat: Vec<f64>,
    pub domain: Domain,
    /// Average one-step bound `E(|dY_k| | F_i) <= b` (averaged mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    /// `Pr(|dY_k| > beta | F_i) <= gamma` (truncated mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Worst-case step bound `|dY_k| <= B` (truncated mode).
    #[serde(default, rename = "B", skip_serializing_if = "Option::is_none")]
    pub big_b: Option<f64>,
    /// Allowed number of large steps (truncated mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    /// Optional `F_i`-measurable side event checked at every step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<EventPredicate>,
}

/// A side event `E_i` on the current counts. Coordinates are 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EventPredicate {
    AtLeast { index: usize, value: i64 },
    AtMost { index: usize, value: i64 },
}

impl EventPredicate {
    pub fn holds(&self, counts: &[i64]) -> bool {
        match *self {
            Self::AtLeast { index, value } => counts[index] >= value,
            Self::AtMost { index, value } => counts[index] <= value,
        }
    }

    fn index(&self) -> usize {
        match *self {
            Self::AtLeast { index, .. } | Self::AtMost { index, .. } => index,
        }
    }
}

/// Parameters of the truncation extension.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Truncation {
    pub gamma: f64,
    pub big_b: f64,
    pub x: f64,
}

impl ProcessSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::InvalidSpec(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        if self.a == 0 {
            return Err(Error::InvalidSpec("a must be at least 1".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidSpec("n must be at least 1".into()));
        }
        self.drift.validate()?;
        check_dim(self.a, self.drift.dim())?;
        check_dim(self.a, self.y_hat.len())?;
        self.domain.validate()?;
        check_dim(self.a, self.domain.dim())?;
        nonneg("L", self.lipschitz)?;
        nonneg("delta", self.delta)?;
        positive("beta", self.beta)?;
        positive("lambda", self.lambda)?;
        if let Some(b) = self.b {
            positive("b", b)?;
        }
        if let Some(g) = self.gamma {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::InvalidSpec(format!("gamma = {g} is not a probability")));
            }
        }
        if let Some(big_b) = self.big_b {
            positive("B", big_b)?;
        }
        if let Some(x) = self.x {
            nonneg("x", x)?;
        }
        if let Some(ev) = &self.event {
            if ev.index() >= self.a {
                return Err(Error::InvalidSpec(format!(
                    "event index {} out of range for a = {}",
                    ev.index(),
                    self.a
                )));
            }
        }
        if !self.domain.contains(0.0, &self.y_hat) {
            return Err(Error::InvalidSpec(
                "initial point (0, y_hat) must lie strictly inside the domain".into(),
            ));
        }
        Ok(())
    }

    pub fn n_f64(&self) -> f64 {
        self.n as f64
    }

    /// `floor(T n)` for a given horizon.
    pub fn step_cap(&self, horizon: f64) -> usize {
        (horizon * self.n_f64()).floor().max(0.0) as usize
    }

    /// The truncation triple, if all three values are present.
    pub fn truncation(&self) -> Option<Truncation> {
        Some(Truncation {
            gamma: self.gamma?,
            big_b: self.big_b?,
            x: self.x?,
        })
    }

    /// Same instance with a different initial anchor.
    pub fn with_anchor(&self, y_hat: Vec<f64>) -> Result<Self> {
        let mut s = self.clone();
        s.y_hat = y_hat;
        s.validate()?;
        Ok(s)
    }

    /// Condition (iii): `max_k |Y_k(0) - y_hat_k n| <= lambda n` with `(0, y_hat)` in D.
    pub fn check_initial_condition(&self, y0: &[i64]) -> Result<bool> {
        check_dim(self.a, y0.len())?;
        Ok(self.domain.contains(0.0, &self.y_hat)
            && self.initial_offset(y0) <= self.lambda * self.n_f64() * (1.0 + 1e-12))
    }

    /// `max_k |Y_k(0) - y_hat_k n|` in count units.
    pub fn initial_offset(&self, y0: &[i64]) -> f64 {
        let n = self.n_f64();
        y0.iter()
            .zip(&self.y_hat)
            .map(|(&y, yh)| (y as f64 - yh * n).abs())
            .fold(0.0, f64::max)
    }
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!("{name} = {v} must be finite and >= 0")))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!("{name} = {v} must be finite and > 0")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn bins(n: u64, lambda: f64) -> ProcessSpec {
        ProcessSpec {
            schema: 1,
            a: 1,
            n,
            drift: DriftModel::BallsInBins,
            lipschitz: 1.0,
            delta: 0.0,
            beta: 1.0,
            lambda,
            y_hat: vec![0.5],
            domain: Domain::new(-0.1, 2.0, vec![0.05], vec![1.1]).unwrap(),
            b: None,
            gamma: None,
            big_b: None,
            x: None,
            event: None,
        }
    }

    #[test]
    fn initial_condition_cases() {
        let s = bins(100, 0.01);
        assert!(s.check_initial_condition(&[50]).unwrap());
        assert!(s.check_initial_condition(&[51]).unwrap());
        assert!(s.check_initial_condition(&[49]).unwrap());
        assert!(!s.check_initial_condition(&[52]).unwrap());
        assert!(s.check_initial_condition(&[50, 1]).is_err());
    }

    #[test]
    fn json_field_names() {
        let s = bins(100, 0.01);
        let text = s.to_json().unwrap();
        assert!(text.contains("\"L\""));
        assert!(text.contains("\"y_hat\""));
        assert!(!text.contains("\"B\""));
        assert_eq!(ProcessSpec::from_json(&text).unwrap(), s);
    }

    #[test]
    fn rejects_bad_instances() {
        let mut s = bins(100, 0.01);
        s.y_hat = vec![1.5];
        assert!(s.validate().is_err());
        let mut s = bins(100, 0.01);
        s.lambda = 0.0;
        assert!(s.validate().is_err());
        let mut s = bins(100, 0.01);
        s.schema = 2;
        assert!(s.validate().is_err());
        let mut s = bins(100, 0.01);
        s.a = 2;
        assert!(s.validate().is_err());
        let mut s = bins(100, 0.01);
        s.event = Some(EventPredicate::AtLeast { index: 1, value: 0 });
        assert!(s.validate().is_err());
        assert!(ProcessSpec::from_json("{\"a\": 1").is_err());
    }
}
