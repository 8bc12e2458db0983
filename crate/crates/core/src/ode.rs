//! Limiting ODE system `y' = F(t, y)`, `y(0) = y_hat`, together with the
//! constants `R`, `T` and the horizon `sigma` up to which the solution keeps
//! l-infinity distance `3 e^{L T} lambda` from the boundary of the domain.
//!
//! Integration is classical fixed-step RK4. A fixed grid keeps `sigma`
//! deterministic: it is always a grid time, rounded down.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{check_dim, Error, Result};
use crate::model::DriftModel;
use crate::numfmt::sig12;
use crate::spec::{ProcessSpec, Truncation};

/// Smallest number of RK4 steps on `[0, T]`.
pub const MIN_GRID_STEPS: usize = 2048;
/// Largest number of RK4 steps on `[0, T]`.
pub const MAX_GRID_STEPS: usize = 1 << 20;
/// Per-axis sampling resolution used to bound `sup |F_k|`.
pub const RT_AXIS_RESOLUTION: usize = 64;
/// Cap on the total number of drift evaluations in [`compute_rt`]; the
/// per-axis resolution drops below [`RT_AXIS_RESOLUTION`] in high dimension.
pub const RT_GRID_BUDGET: usize = 1 << 22;
/// Nominal accuracy of the fixed-step solver on the built-in instances.
pub const SOLVER_TOLERANCE: f64 = 1e-10;
/// Largest `lambda` accepted by [`range_check`] as a stand-in for `lambda = o(1)`.
pub const RANGE_CHECK_MAX_LAMBDA: f64 = 0.01;

/// `R`, `T`, `sigma` and the boundary margin `3 e^{L T} lambda`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub sigma: f64,
    pub margin: f64,
}

/// `3 e^{L T} lambda`, in rescaled units.
pub fn boundary_margin(lambda: f64, lipschitz: f64, horizon: f64) -> f64 {
    3.0 * (lipschitz * horizon).exp() * lambda
}

/// Number of RK4 steps on `[0, T]` for scale `n`.
pub fn grid_steps(horizon: f64, n: u64) -> usize {
    let tn = (horizon * n as f64).ceil();
    let tn = if tn >= MAX_GRID_STEPS as f64 { MAX_GRID_STEPS } else { tn.max(0.0) as usize };
    tn.max(MIN_GRID_STEPS)
}

/// `T` is the upper time face of the domain. `R` bounds `max_k |F_k|` over the
/// part of the box with `t >= 0`: the maximum over a regular grid, plus `L`
/// times the largest distance from any box point to its nearest grid node.
/// The result is floored at 1.
pub fn compute_rt(spec: &ProcessSpec) -> Result<(f64, f64)> {
    let horizon = spec.domain.t_hi;
    if horizon <= 0.0 {
        return Err(Error::InvalidSpec(format!("T = t_hi = {horizon} must be > 0")));
    }
    let mut axes = spec.domain.axes();
    axes[0].0 = axes[0].0.max(0.0);

    let dims = axes.len();
    let res = axis_resolution(dims);
    let a = spec.a;
    let mut point = vec![0.0; dims];
    let mut out = vec![0.0; a];
    let mut idx = vec![0usize; dims];
    let mut sup: f64 = 0.0;
    loop {
        for ((p, &(lo, hi)), &i) in point.iter_mut().zip(&axes).zip(&idx) {
            *p = lo + (hi - lo) * i as f64 / (res - 1) as f64;
        }
        spec.drift.eval(point[0], &point[1..], &mut out)?;
        sup = out.iter().fold(sup, |m, v| m.max(v.abs()));
        // odometer increment
        let mut d = 0;
        loop {
            if d == dims {
                let half_cell = axes
                    .iter()
                    .map(|(lo, hi)| (hi - lo) / (2.0 * (res - 1) as f64))
                    .fold(0.0, f64::max);
                let r = (sup + spec.lipschitz * half_cell).max(1.0);
                return Ok((r, horizon));
            }
            idx[d] += 1;
            if idx[d] < res {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

fn axis_resolution(dims: usize) -> usize {
    let mut r = RT_AXIS_RESOLUTION;
    while r > 2 && (r as f64).powi(dims as i32) > RT_GRID_BUDGET as f64 {
        r -= 1;
    }
    r
}

/// One classical RK4 step from `(t, y)` with step `h`.
pub fn rk4_step(drift: &DriftModel, t: f64, y: &[f64], h: f64, out: &mut [f64]) -> Result<()> {
    rk4_step_checked(drift, t, y, h, out, |_, _| true).map(|_| ())
}

/// RK4 step that evaluates `accept` on every stage point first; returns
/// `Ok(false)` without touching `out` if a stage point is rejected.
fn rk4_step_checked(
    drift: &DriftModel,
    t: f64,
    y: &[f64],
    h: f64,
    out: &mut [f64],
    accept: impl Fn(f64, &[f64]) -> bool,
) -> Result<bool> {
    let a = y.len();
    let mut k = [vec![0.0; a], vec![0.0; a], vec![0.0; a], vec![0.0; a]];
    let mut tmp = vec![0.0; a];
    let stages = [(0.0, 0.0), (0.5, 0.5), (0.5, 0.5), (1.0, 1.0)];
    for s in 0..4 {
        let (ct, cy) = stages[s];
        if s == 0 {
            tmp.copy_from_slice(y);
        } else {
            for ((v, y0), kp) in tmp.iter_mut().zip(y).zip(&k[s - 1]) {
                *v = y0 + cy * h * kp;
            }
        }
        let ts = t + ct * h;
        if !accept(ts, &tmp) {
            return Ok(false);
        }
        drift.eval(ts, &tmp, &mut k[s])?;
    }
    for (j, o) in out.iter_mut().enumerate() {
        *o = y[j] + h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
    }
    Ok(true)
}

/// Plain fixed-step integration without domain checks. Returns the states at
/// `t0 + j h` for `j = 0..=steps`.
pub fn integrate(drift: &DriftModel, t0: f64, y0: &[f64], h: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    check_dim(drift.dim(), y0.len())?;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(y0.to_vec());
    let mut next = vec![0.0; y0.len()];
    for j in 0..steps {
        let t = t0 + j as f64 * h;
        rk4_step(drift, t, &states[j], h, &mut next)?;
        states.push(next.clone());
    }
    Ok(states)
}

/// Why the integration loop stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Halt {
    /// The next grid point came closer than the margin to the boundary.
    Margin,
    /// An RK stage left the domain even after halving the step.
    StageOutside,
    /// Reached `t = T`.
    Horizon,
}

/// Dense numerical solution on the grid `0, h, 2h, .., sigma`.
///
/// Between grid points values are linearly interpolated; on an interval of
/// length `h` the interpolation error is at most `h * sup |y'| <= R h`, and
/// `h^2 / 8 * sup |y''|` for twice differentiable solutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeSolution {
    pub a: usize,
    pub step: f64,
    pub lipschitz: f64,
    pub grid: Vec<f64>,
    values: Vec<f64>,
    pub constants: Constants,
    pub halt: Halt,
}

impl OdeSolution {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn sigma(&self) -> f64 {
        self.constants.sigma
    }

    /// `y(t_j)`.
    pub fn state(&self, j: usize) -> &[f64] {
        &self.values[j * self.a..(j + 1) * self.a]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.a)
    }

    /// Linear interpolation of `y(t)` for `t` in `[0, sigma]`.
    pub fn value_at(&self, t: f64, out: &mut [f64]) -> Result<()> {
        check_dim(self.a, out.len())?;
        let last = self.grid.len() - 1;
        let end = self.grid[last];
        if !(t >= 0.0 && t <= end * (1.0 + 1e-15)) {
            return Err(Error::InvalidParameter(format!("t = {t} outside [0, {end}]")));
        }
        let pos = t / self.step;
        let j = (pos.floor() as usize).min(last);
        if j == last {
            out.copy_from_slice(self.state(last));
            return Ok(());
        }
        let w = (pos - j as f64).clamp(0.0, 1.0);
        for ((o, y0), y1) in out.iter_mut().zip(self.state(j)).zip(self.state(j + 1)) {
            *o = y0 + w * (y1 - y0);
        }
        Ok(())
    }

    /// CSV with columns `t, y_1, .., y_a`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.a).map(|k| format!("y_{k}")));
        wtr.write_record(&header)?;
        for (t, y) in self.grid.iter().zip(self.states()) {
            let mut row = vec![sig12(*t)];
            row.extend(y.iter().map(|v| sig12(*v)));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Largest grid index `j` such that every grid point `s <= j` keeps distance
/// at least `margin` from the boundary, or `None` if `t_0` already fails.
pub fn compute_sigma(grid: &[f64], states: &[Vec<f64>], domain: &Domain, margin: f64) -> Option<usize> {
    let mut last = None;
    for (j, (t, y)) in grid.iter().zip(states).enumerate() {
        if domain.distance_unchecked(*t, y) < margin {
            break;
        }
        last = Some(j);
    }
    last
}

/// Integrates the limiting system and determines `sigma`.
///
/// Uses `h = T / max(2048, min(ceil(T n), 2^20))`. If an RK stage leaves the
/// domain the step is retried as two half steps; if that also fails,
/// integration stops and `sigma` is the last safe grid time. When the initial
/// point is already within the margin of the boundary, `sigma = 0`.
pub fn solve_ode(spec: &ProcessSpec, r: f64, horizon: f64) -> Result<OdeSolution> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!("T = {horizon} must be > 0")));
    }
    let domain = &spec.domain;
    if !domain.contains(0.0, &spec.y_hat) {
        return Err(Error::InvalidSpec("(0, y_hat) is not inside the domain".into()));
    }
    let a = spec.a;
    let steps = grid_steps(horizon, spec.n);
    let h = horizon / steps as f64;
    let margin = boundary_margin(spec.lambda, spec.lipschitz, horizon);
    let inside = |t: f64, y: &[f64]| domain.distance_unchecked(t, y) > 0.0;

    let mut grid = vec![0.0];
    let mut states = vec![spec.y_hat.clone()];
    let mut halt = Halt::Horizon;
    let mut next = vec![0.0; a];
    let mut half = vec![0.0; a];
    if domain.distance_unchecked(0.0, &spec.y_hat) >= margin {
        for j in 0..steps {
            let t = j as f64 * h;
            let y = &states[j];
            let ok = rk4_step_checked(&spec.drift, t, y, h, &mut next, inside)?
                || (rk4_step_checked(&spec.drift, t, y, 0.5 * h, &mut half, inside)?
                    && rk4_step_checked(&spec.drift, t + 0.5 * h, &half, 0.5 * h, &mut next, inside)?);
            if !ok {
                halt = Halt::StageOutside;
                break;
            }
            let t_next = (j + 1) as f64 * h;
            grid.push(t_next);
            states.push(next.clone());
            if domain.distance_unchecked(t_next, &next) < margin {
                halt = Halt::Margin;
                break;
            }
        }
    } else {
        halt = Halt::Margin;
    }

    let keep = compute_sigma(&grid, &states, domain, margin).map_or(1, |j| j + 1);
    grid.truncate(keep);
    states.truncate(keep);
    let sigma = if keep == 1 { 0.0 } else { grid[keep - 1] };
    Ok(OdeSolution {
        a,
        step: h,
        lipschitz: spec.lipschitz,
        grid,
        values: states.concat(),
        constants: Constants { r, horizon, sigma, margin },
        halt,
    })
}

/// Outcome of the lower-bound check on `lambda`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub lambda: f64,
    pub threshold: f64,
    pub admissible: bool,
    pub inequality: String,
}

/// `lambda >= delta min{T, 1/L} + R / n`, or with truncation
/// `lambda >= (delta + gamma B) min{T, 1/L} + (R + x B) / n`.
pub fn check_lambda_admissible(
    spec: &ProcessSpec,
    r: f64,
    horizon: f64,
    truncation: Option<Truncation>,
) -> Admissibility {
    let time_scale = if spec.lipschitz > 0.0 {
        horizon.min(1.0 / spec.lipschitz)
    } else {
        horizon
    };
    let n = spec.n_f64();
    // a truncation triple that adds nothing leaves the plain inequality
    let truncation = truncation.filter(|tr| tr.gamma * tr.big_b != 0.0 || tr.x * tr.big_b != 0.0);
    let (threshold, form) = match truncation {
        None => (
            spec.delta * time_scale + r / n,
            "delta min{T, 1/L} + R/n",
        ),
        Some(tr) => (
            (spec.delta + tr.gamma * tr.big_b) * time_scale + (r + tr.x * tr.big_b) / n,
            "(delta + gamma B) min{T, 1/L} + (R + x B)/n",
        ),
    };
    let admissible = spec.lambda >= threshold;
    let rel = if admissible { ">=" } else { "<" };
    Admissibility {
        lambda: spec.lambda,
        threshold,
        admissible,
        inequality: format!("lambda = {} {rel} {form} = {}", sig12(spec.lambda), sig12(threshold)),
    }
}

/// Checks that every grid value with `t_j <= sigma` lies in
/// `[A_k - 3 e^{LT} lambda, B_k + 3 e^{LT} lambda]`.
pub fn range_check(sol: &OdeSolution, bounds: &[(f64, f64)], lambda: f64) -> Result<bool> {
    check_dim(sol.a, bounds.len())?;
    if !(lambda > 0.0 && lambda <= RANGE_CHECK_MAX_LAMBDA) {
        return Err(Error::InvalidParameter(format!(
            "range check needs 0 < lambda <= {RANGE_CHECK_MAX_LAMBDA}, got {lambda}"
        )));
    }
    let m = boundary_margin(lambda, sol.lipschitz, sol.constants.horizon);
    Ok(sol
        .states()
        .all(|y| y.iter().zip(bounds).all(|(v, (lo, hi))| *v >= lo - m && *v <= hi + m)))
}

/// Empirical lower bound on the l-infinity Lipschitz constant of the drift
/// from `samples` random nearby point pairs inside the domain.
pub fn estimate_lipschitz_lower_bound(spec: &ProcessSpec, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axes = spec.domain.axes();
    let a = spec.a;
    let mut p = vec![0.0; a + 1];
    let mut q = vec![0.0; a + 1];
    let (mut fp, mut fq) = (vec![0.0; a], vec![0.0; a]);
    let mut best: f64 = 0.0;
    for _ in 0..samples {
        for ((pi, qi), &(lo, hi)) in p.iter_mut().zip(q.iter_mut()).zip(&axes) {
            let w = hi - lo;
            *pi = lo + w * rng.random_range(0.01..0.99);
            *qi = (*pi + w * rng.random_range(-1e-3..1e-3)).clamp(lo + 1e-3 * w, hi - 1e-3 * w);
        }
        let gap = p.iter().zip(&q).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if gap == 0.0 {
            continue;
        }
        spec.drift.eval(p[0], &p[1..], &mut fp)?;
        spec.drift.eval(q[0], &q[1..], &mut fq)?;
        let diff = fp.iter().zip(&fq).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        best = best.max(diff / gap);
    }
    Ok(best)
}
