//! Registered drift functions `F_k(t, y)`, selected by name in the JSON spec.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A named drift function plus its parameters.
///
/// Each name except `linear` also selects the matching simulation plugin in
/// [`crate::process`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftModel {
    /// `F(t, y) = -y`: fraction of empty bins.
    BallsInBins,
    /// `F_k = 2 (y_{k-1} - y_k)` for `k = 0..=max_degree`, with `y_{-1} = 0`.
    DegreeProcess { max_degree: usize },
    /// `F(t, y) = -2`: unmatched vertices under random greedy matching.
    GreedyMatching,
    /// `F = 0` in `dim` coordinates; the process never moves.
    Constant { dim: usize },
    /// `F = 0` in `dim` coordinates; each coordinate takes independent fair `+-step` moves.
    Coin {
        dim: usize,
        #[serde(default = "one")]
        step: i64,
    },
    /// `F(t, y) = matrix * y + offset`. ODE only, there is no process behind it.
    Linear {
        matrix: Vec<Vec<f64>>,
        offset: Vec<f64>,
    },
}

fn one() -> i64 {
    1
}

impl DriftModel {
    pub fn name(&self) -> &'static str {
        match self {
            Self::BallsInBins => "balls-in-bins",
            Self::DegreeProcess { .. } => "degree-process",
            Self::GreedyMatching => "greedy-matching",
            Self::Constant { .. } => "constant",
            Self::Coin { .. } => "coin",
            Self::Linear { .. } => "linear",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::BallsInBins | Self::GreedyMatching => 1,
            Self::DegreeProcess { max_degree } => max_degree + 1,
            Self::Constant { dim } | Self::Coin { dim, .. } => *dim,
            Self::Linear { matrix, .. } => matrix.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Constant { dim } | Self::Coin { dim, .. } if *dim == 0 => {
                Err(Error::InvalidSpec(format!("{}: dim must be positive", self.name())))
            }
            Self::Coin { step, .. } if *step < 0 => {
                Err(Error::InvalidSpec("coin: step must be nonnegative".into()))
            }
            Self::Linear { matrix, offset } => {
                if matrix.is_empty() {
                    return Err(Error::InvalidSpec("linear: empty matrix".into()));
                }
                let a = matrix.len();
                check_dim(a, offset.len())?;
                for row in matrix {
                    check_dim(a, row.len())?;
                    if row.iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidSpec("linear: non-finite entry".into()));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Writes `F(t, y)` into `out`.
    pub fn eval(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        let a = self.dim();
        check_dim(a, y.len())?;
        check_dim(a, out.len())?;
        self.eval_unchecked(t, y, out);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Drift(format!(
                "{} produced a non-finite value at t = {t}",
                self.name()
            )));
        }
        Ok(())
    }

    pub(crate) fn eval_unchecked(&self, _t: f64, y: &[f64], out: &mut [f64]) {
        match self {
            Self::BallsInBins => out[0] = -y[0],
            Self::DegreeProcess { .. } => {
                let mut prev = 0.0;
                for (o, v) in out.iter_mut().zip(y) {
                    *o = 2.0 * (prev - v);
                    prev = *v;
                }
            }
            Self::GreedyMatching => out[0] = -2.0,
            Self::Constant { .. } | Self::Coin { .. } => out.fill(0.0),
            Self::Linear { matrix, offset } => {
                for ((o, row), c) in out.iter_mut().zip(matrix).zip(offset) {
                    *o = row.iter().zip(y).map(|(m, v)| m * v).sum::<f64>() + c;
                }
            }
        }
    }

    /// The exact l-infinity Lipschitz constant of the map `y -> F(t, y)`.
    ///
    /// None of the built-in drifts depend on `t`, so this is also the constant
    /// with respect to `(t, y)`.
    pub fn lipschitz_constant(&self) -> f64 {
        match self {
            Self::BallsInBins => 1.0,
            Self::DegreeProcess { max_degree } => {
                if *max_degree == 0 {
                    2.0
                } else {
                    4.0
                }
            }
            Self::GreedyMatching | Self::Constant { .. } | Self::Coin { .. } => 0.0,
            Self::Linear { matrix, .. } => matrix
                .iter()
                .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max),
        }
    }
}
