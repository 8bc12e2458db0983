//! Process plugins: random processes whose tracked counts `Y_k(i)` the method
//! approximates, each with its exact one-step conditional moments.

mod builtin;

use rand::Rng;

pub use builtin::{
    BallsInBins, BinsState, CoinWalk, ConstantProcess, DegreeProcess, DegreeState, GreedyMatching,
    MatchingState,
};

use crate::error::{Error, Result};
use crate::model::DriftModel;
use crate::spec::ProcessSpec;

/// Failure inside a plugin's step function.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepError(pub String);

impl std::fmt::Display for StepError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// A discrete-time random process observed through `a` integer counts.
///
/// All conditional quantities are exact functions of the current state:
/// `drift` is `E(Y_k(i+1) - Y_k(i) | F_i)`, `mean_abs_step` is
/// `E(|Y_k(i+1) - Y_k(i)| | F_i)` and `exceed_probability` is
/// `Pr(|Y_k(i+1) - Y_k(i)| > threshold | F_i)`.
pub trait Process: Sync {
    type State: Clone + Send;

    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn initial_state(&self) -> Self::State;
    fn observe(&self, state: &Self::State, out: &mut [i64]);
    fn drift(&self, state: &Self::State, out: &mut [f64]);
    fn mean_abs_step(&self, state: &Self::State, out: &mut [f64]);
    fn exceed_probability(&self, state: &Self::State, threshold: f64, out: &mut [f64]);
    fn step<R: Rng + ?Sized>(&self, state: &mut Self::State, rng: &mut R) -> std::result::Result<(), StepError>;
}

/// Any built-in plugin, selected from a spec's drift model.
#[derive(Clone, Debug)]
pub enum AnyProcess {
    BallsInBins(BallsInBins),
    Degree(DegreeProcess),
    Matching(GreedyMatching),
    Constant(ConstantProcess),
    Coin(CoinWalk),
}

#[derive(Clone, Debug)]
pub enum AnyState {
    BallsInBins(BinsState),
    Degree(DegreeState),
    Matching(MatchingState),
    Counts(Vec<i64>),
}

impl AnyProcess {
    /// The plugin registered under the spec's drift name, started from its
    /// natural initial state (`Y(0) = round(y_hat n)` for the generic walks).
    pub fn from_spec(spec: &ProcessSpec) -> Result<Self> {
        let n = usize::try_from(spec.n)
            .map_err(|_| Error::InvalidSpec(format!("n = {} too large", spec.n)))?;
        let start = || spec.y_hat.iter().map(|y| (y * spec.n_f64()).round() as i64).collect();
        Ok(match &spec.drift {
            DriftModel::BallsInBins => Self::BallsInBins(BallsInBins::new(n)),
            DriftModel::DegreeProcess { max_degree } => Self::Degree(DegreeProcess::new(n, *max_degree)),
            DriftModel::GreedyMatching => Self::Matching(GreedyMatching::new(n)),
            DriftModel::Constant { .. } => Self::Constant(ConstantProcess::new(start())),
            DriftModel::Coin { step, .. } => Self::Coin(CoinWalk::new(start(), *step)),
            DriftModel::Linear { .. } => return Err(Error::NoPlugin(spec.drift.name().into())),
        })
    }
}

macro_rules! dispatch {
    ($self:ident, $state:ident, $p:ident, $s:ident => $body:expr) => {
        match ($self, $state) {
            (AnyProcess::BallsInBins($p), AnyState::BallsInBins($s)) => $body,
            (AnyProcess::Degree($p), AnyState::Degree($s)) => $body,
            (AnyProcess::Matching($p), AnyState::Matching($s)) => $body,
            (AnyProcess::Constant($p), AnyState::Counts($s)) => $body,
            (AnyProcess::Coin($p), AnyState::Counts($s)) => $body,
            _ => unreachable!("state does not belong to this process"),
        }
    };
}

impl Process for AnyProcess {
    type State = AnyState;

    fn name(&self) -> &'static str {
        match self {
            Self::BallsInBins(p) => p.name(),
            Self::Degree(p) => p.name(),
            Self::Matching(p) => p.name(),
            Self::Constant(p) => p.name(),
            Self::Coin(p) => p.name(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            Self::BallsInBins(p) => p.dim(),
            Self::Degree(p) => p.dim(),
            Self::Matching(p) => p.dim(),
            Self::Constant(p) => p.dim(),
            Self::Coin(p) => p.dim(),
        }
    }

    fn initial_state(&self) -> AnyState {
        match self {
            Self::BallsInBins(p) => AnyState::BallsInBins(p.initial_state()),
            Self::Degree(p) => AnyState::Degree(p.initial_state()),
            Self::Matching(p) => AnyState::Matching(p.initial_state()),
            Self::Constant(p) => AnyState::Counts(p.initial_state()),
            Self::Coin(p) => AnyState::Counts(p.initial_state()),
        }
    }

    fn observe(&self, state: &AnyState, out: &mut [i64]) {
        dispatch!(self, state, p, s => p.observe(s, out))
    }

    fn drift(&self, state: &AnyState, out: &mut [f64]) {
        dispatch!(self, state, p, s => p.drift(s, out))
    }

    fn mean_abs_step(&self, state: &AnyState, out: &mut [f64]) {
        dispatch!(self, state, p, s => p.mean_abs_step(s, out))
    }

    fn exceed_probability(&self, state: &AnyState, threshold: f64, out: &mut [f64]) {
        dispatch!(self, state, p, s => p.exceed_probability(s, threshold, out))
    }

    fn step<R: Rng + ?Sized>(&self, state: &mut AnyState, rng: &mut R) -> std::result::Result<(), StepError> {
        dispatch!(self, state, p, s => p.step(s, rng))
    }
}
