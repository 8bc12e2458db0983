//! Closed-form evaluators for the inequalities behind the method: Gronwall
//! (continuous and discrete), Azuma-Hoeffding, the Freedman-type variance
//! bound, binomial tails for truncation, and the error-envelope integral.
//!
//! Failure probabilities are returned exactly as computed; they may exceed 1.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

/// Number of Simpson panels used by [`error_envelope`].
pub const SIMPSON_PANELS: usize = 1024;

/// `x(t) <= C e^{L t}` for any continuous `x` with `x(t) <= C + L int_0^t x`.
pub fn gronwall_continuous_bound(c: f64, lipschitz: f64, t: f64) -> Result<f64> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::InvalidParameter(format!("t = {t} must be >= 0")));
    }
    if lipschitz < 0.0 || lipschitz.is_nan() {
        return Err(Error::InvalidParameter(format!("L = {lipschitz} must be >= 0")));
    }
    Ok(c * (lipschitz * t).exp())
}

/// Distance between an exact and a perturbed ODE solution: `(lambda + delta T) e^{L T}`.
pub fn stability_bound(lambda: f64, delta: f64, lipschitz: f64, horizon: f64) -> f64 {
    (lambda + delta * horizon) * (lipschitz * horizon).exp()
}

/// Constants of the recurrence `x_j < c + sum_{i<j} (a x_i + b)`, `0 <= j <= m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GronwallDiscreteParams {
    pub c: f64,
    pub b: f64,
    pub a: f64,
    pub m: u64,
}

/// `(c + b min{m, 1/a}) e^{a m}`, a strict upper bound on `x_m`.
pub fn gronwall_discrete_bound(p: GronwallDiscreteParams) -> Result<f64> {
    if !(p.a > 0.0) {
        return Err(Error::InvalidParameter(format!("a = {} must be > 0", p.a)));
    }
    if p.b < 0.0 || p.c < 0.0 {
        return Err(Error::InvalidParameter("b and c must be >= 0".into()));
    }
    let m = p.m as f64;
    Ok((p.c + p.b * m.min(1.0 / p.a)) * (p.a * m).exp())
}

/// Azuma-Hoeffding: `Pr(max_{j<=m} |M_j| >= t) <= 2 exp(-t^2 / (2 m c^2))`.
///
/// With `c = 0` the martingale is constant, so the bound is `0` for `t > 0`;
/// `t = 0` returns `2` (continuity in `t`).
pub fn azuma_bound(m: u64, c: f64, t: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be >= 1".into()));
    }
    if c < 0.0 || t < 0.0 || c.is_nan() || t.is_nan() {
        return Err(Error::InvalidParameter(format!("c = {c} and t = {t} must be >= 0")));
    }
    if t == 0.0 {
        return Ok(2.0);
    }
    if c == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * (-t * t / (2.0 * m as f64 * c * c)).exp())
}

/// Failure probability of the main theorem: `2a exp(-n lambda^2 / (8 T beta^2))`.
pub fn theorem_failure_probability(a: usize, n: u64, lambda: f64, horizon: f64, beta: f64) -> f64 {
    2.0 * a as f64 * (-(n as f64) * lambda * lambda / (8.0 * horizon * beta * beta)).exp()
}

/// Average one-step bound variant:
/// `2a exp(-min{n lambda^2 / (4 T beta b), n lambda / (4 beta)})`.
pub fn freedman_failure_probability(
    a: usize,
    n: u64,
    lambda: f64,
    horizon: f64,
    beta: f64,
    b: f64,
) -> f64 {
    let n = n as f64;
    let exponent = (n * lambda * lambda / (4.0 * horizon * beta * b)).min(n * lambda / (4.0 * beta));
    2.0 * a as f64 * (-exponent).exp()
}

/// Per-coordinate two-term form `2 exp(-(lambda n)^2 / (2 T n beta b + 2 beta lambda n))`.
///
/// This is the bound on `Pr(max_j |M_k(j)| >= lambda n)` from which the
/// `min{..}` form of [`freedman_failure_probability`] is derived. Its constants
/// follow the printed derivation; the cited martingale lemma is not available
/// to cross-check them.
pub fn freedman_two_term_bound(n: u64, lambda: f64, horizon: f64, beta: f64, b: f64) -> f64 {
    let n = n as f64;
    let ln = lambda * n;
    2.0 * (-(ln * ln) / (2.0 * horizon * n * beta * b + 2.0 * beta * ln)).exp()
}

/// Exact `Pr(Z >= k)` for `Z ~ Bin(m, gamma)`, summed in log space.
pub fn binomial_tail(m: u64, gamma: f64, k: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("gamma = {gamma} is not a probability")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    if k > m || gamma == 0.0 {
        return Ok(0.0);
    }
    if gamma == 1.0 {
        return Ok(1.0);
    }
    let ln_p = gamma.ln();
    let ln_q = (-gamma).ln_1p();
    let log_term = |j: u64| ln_binomial(m, j) + j as f64 * ln_p + (m - j) as f64 * ln_q;

    // Terms increase up to the mode and decrease after it. The smaller side
    // of the mode is summed outward from its largest term.
    let mode = (((m + 1) as f64 * gamma).floor() as u64).min(m);
    let side_sum = |range: &mut dyn Iterator<Item = u64>, peak: f64| {
        let mut sum = 0.0;
        for j in range {
            let w = (log_term(j) - peak).exp();
            sum += w;
            if w < 1e-18 * sum {
                break;
            }
        }
        (peak + sum.ln()).exp()
    };
    if k > mode {
        Ok(side_sum(&mut (k..=m), log_term(k)).min(1.0))
    } else {
        let lower = side_sum(&mut (0..k).rev(), log_term(k - 1));
        Ok((1.0 - lower).clamp(0.0, 1.0))
    }
}

/// Closed-form upper bounds on `Pr(Z >= floor(x + 1))` for `Z ~ Bin(floor(T n), gamma)`:
/// `T n gamma` when `x = 0`, otherwise `(e T n gamma / ceil(x))^ceil(x)`.
pub fn truncation_tail_remark_bound(tn: f64, gamma: f64, x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("gamma = {gamma} is not a probability")));
    }
    if x < 0.0 || x.is_nan() {
        return Err(Error::InvalidParameter(format!("x = {x} must be >= 0")));
    }
    if x == 0.0 {
        return Ok(tn * gamma);
    }
    let c = x.ceil();
    Ok((std::f64::consts::E * tn * gamma / c).powf(c))
}

/// Truncation variant:
/// `2a exp(-n lambda^2 / (8 T beta^2)) + a Pr(Bin(floor(T n), gamma) >= floor(x + 1))`.
pub fn truncated_failure_probability(
    a: usize,
    n: u64,
    lambda: f64,
    horizon: f64,
    beta: f64,
    gamma: f64,
    x: f64,
) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::InvalidParameter(format!("x = {x} must be >= 0")));
    }
    let m = (horizon * n as f64).floor() as u64;
    let k = (x + 1.0).floor() as u64;
    Ok(theorem_failure_probability(a, n, lambda, horizon, beta)
        + a as f64 * binomial_tail(m, gamma, k)?)
}

/// Error envelope `xi(t) = lambda + int_0^t delta(s) ds`, integrated with
/// composite Simpson on [`SIMPSON_PANELS`] panels.
///
/// Every node value of `delta` must be nonnegative.
pub fn error_envelope<F: Fn(f64) -> f64>(lambda: f64, delta: F, t: f64) -> Result<f64> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::InvalidParameter(format!("t = {t} must be >= 0")));
    }
    if t == 0.0 {
        return Ok(lambda);
    }
    let h = t / SIMPSON_PANELS as f64;
    let mut acc = 0.0;
    for j in 0..=SIMPSON_PANELS {
        let v = delta(j as f64 * h);
        if !(v >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "delta({}) = {v} must be >= 0",
                j as f64 * h
            )));
        }
        let w = if j == 0 || j == SIMPSON_PANELS {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * v;
    }
    Ok(lambda + acc * h / 3.0)
}
