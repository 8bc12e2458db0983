//! Trajectory simulation: runs a process plugin until the stopping index
//! `I_D = min(floor(T n), first exit from D)`, records exact conditional
//! drifts, flags hypothesis violations, and (optionally) tracks deviations
//! from an ODE solution online so thinned paths lose nothing.

use std::fmt;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numfmt::sig12;
use crate::ode::{boundary_margin, OdeSolution};
use crate::process::Process;
use crate::spec::{EventPredicate, ProcessSpec, Truncation};

/// Relative slack on the trend comparison, absorbing roundoff between the
/// plugin's count-scale drift and `F` evaluated at `Y / n`.
pub const TREND_SLACK: f64 = 1e-12;

/// Paths are thinned to roughly this many rows unless full recording is requested.
pub const THINNED_ROWS: u64 = 1000;

/// Per-step hypothesis flags, as a bit set.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StepFlags(u8);

impl StepFlags {
    /// `|dY_k| > beta` for some `k`.
    pub const BOUND: Self = Self(1);
    /// `|E(dY_k | F_i) - F_k(i/n, Y(i)/n)| > delta`.
    pub const TREND: Self = Self(2);
    /// `E(|dY_k| | F_i) > b`.
    pub const AVERAGE: Self = Self(4);
    /// `Pr(|dY_k| > beta | F_i) > gamma`.
    pub const TAIL: Self = Self(8);
    /// `|dY_k| > B`.
    pub const HARD_BOUND: Self = Self(16);

    const NAMES: [(Self, &'static str); 5] = [
        (Self::BOUND, "bound"),
        (Self::TREND, "trend"),
        (Self::AVERAGE, "average"),
        (Self::TAIL, "tail"),
        (Self::HARD_BOUND, "hard-bound"),
    ];

    pub fn empty() -> Self {
        Self(0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, other: Self) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: Self) {
        self.0 |= other.0;
    }
}

impl fmt::Display for StepFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (flag, name) in Self::NAMES {
            if self.contains(flag) {
                if !first {
                    f.write_str("|")?;
                }
                f.write_str(name)?;
                first = false;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for StepFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StepFlags({self})")
    }
}

/// A flagged step `i -> i + 1` together with the counts `Y(i)` it started from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlagRecord {
    pub index: usize,
    pub flags: StepFlags,
    pub counts: Vec<i64>,
}

/// One recorded row: `Y(index)` and `E(Y(index + 1) - Y(index) | F_index)`.
/// The drift is empty on the final row (at the stopping index).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub index: usize,
    pub counts: Vec<i64>,
    pub drift: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFailure {
    pub index: usize,
    pub message: String,
}

/// Which rows to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recording {
    Full,
    /// Every `stride`-th row plus the final one.
    Every(usize),
}

impl Recording {
    /// `Every(ceil(n / 1000))`.
    pub fn thinned(n: u64) -> Self {
        Self::Every(n.div_ceil(THINNED_ROWS).max(1) as usize)
    }

    fn keeps(self, i: usize) -> bool {
        match self {
            Self::Full => true,
            Self::Every(s) => i.is_multiple_of(s),
        }
    }
}

/// Online deviation tracking against an ODE solution, including the
/// deterministic Gronwall chain of the proof:
///
/// `D(j) < 2 lambda n + sum_{i<j} [L/n D(i) + (L R / n + delta)]` and
/// `D(m) < (2 lambda n + R + delta min{T n, n/L}) e^{L m / n} <= 3 lambda n e^{L T}`,
///
/// where `D(i) = max_k |Y_k(i) - y_k(i/n) n|`. With truncation parameters the
/// chain uses `2 lambda n + x B` and `delta + gamma B` instead.
#[derive(Clone, Debug)]
pub struct Monitor<'a> {
    solution: &'a OdeSolution,
    n: f64,
    last_step: usize,
    envelope: f64,
    lambda_n: f64,
    slope: f64,
    per_step: f64,
    base: f64,
    final_base: f64,
    rate: f64,
}

impl<'a> Monitor<'a> {
    pub fn new(spec: &ProcessSpec, solution: &'a OdeSolution, truncation: Option<Truncation>) -> Self {
        let n = spec.n_f64();
        let c = solution.constants;
        let lip = spec.lipschitz;
        let (extra, delta) = match truncation {
            Some(t) => (t.x * t.big_b, spec.delta + t.gamma * t.big_b),
            None => (0.0, spec.delta),
        };
        let time_scale = if lip > 0.0 { (c.horizon * n).min(n / lip) } else { c.horizon * n };
        let lambda_n = spec.lambda * n;
        Self {
            solution,
            n,
            last_step: (c.sigma * n + 1e-9).floor() as usize,
            envelope: boundary_margin(spec.lambda, lip, c.horizon) * n,
            lambda_n,
            slope: lip / n,
            per_step: lip * c.r / n + delta,
            base: 2.0 * lambda_n + extra,
            final_base: 2.0 * lambda_n + extra + c.r + delta * time_scale,
            rate: lip / n,
        }
    }

    /// `3 e^{L T} lambda n`.
    pub fn envelope(&self) -> f64 {
        self.envelope
    }

    /// `floor(sigma n)`, the last step covered by the conclusion.
    pub fn last_step(&self) -> usize {
        self.last_step
    }

    /// `max_k |Y_k(i) - y_k(i/n) n|`, or `None` beyond `sigma n`.
    pub fn deviation(&self, i: usize, counts: &[i64], scratch: &mut [f64]) -> Option<f64> {
        if i > self.last_step {
            return None;
        }
        let t = (i as f64 / self.n).min(self.solution.sigma());
        self.solution.value_at(t, scratch).ok()?;
        Some(
            counts
                .iter()
                .zip(scratch.iter())
                .map(|(&y, v)| (y as f64 - v * self.n).abs())
                .fold(0.0, f64::max),
        )
    }
}

/// Result of the online checks on one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorSummary {
    /// `max_{0 <= i <= last} D(i)` with `last = min(sigma n, I_D, I)`.
    pub sup_deviation: f64,
    pub checked_through: usize,
    /// `max_k max_{j <= I_D} |M_k(j)|`.
    pub max_martingale: f64,
    /// Whether `max_k max_j |M_k(j)| < lambda n`.
    pub martingale_event: bool,
    pub replay_steps: usize,
    pub replay_recurrence_violations: usize,
    pub replay_final_violations: usize,
}

struct MonitorState<'m, 'a> {
    monitor: &'m Monitor<'a>,
    scratch: Vec<f64>,
    active: bool,
    sup: f64,
    checked_through: usize,
    sum: f64,
    martingale: Vec<f64>,
    max_martingale: f64,
    steps: usize,
    rec_bad: usize,
    final_bad: usize,
}

impl<'m, 'a> MonitorState<'m, 'a> {
    fn new(monitor: &'m Monitor<'a>, a: usize) -> Self {
        Self {
            monitor,
            scratch: vec![0.0; a],
            active: true,
            sup: 0.0,
            checked_through: 0,
            sum: 0.0,
            martingale: vec![0.0; a],
            max_martingale: 0.0,
            steps: 0,
            rec_bad: 0,
            final_bad: 0,
        }
    }

    fn observe(&mut self, i: usize, counts: &[i64]) {
        if !self.active {
            return;
        }
        let m = self.monitor;
        let Some(d) = m.deviation(i, counts, &mut self.scratch) else {
            self.active = false;
            return;
        };
        self.sup = self.sup.max(d);
        self.checked_through = i;
        self.steps += 1;
        if !(d < m.base + self.sum) {
            self.rec_bad += 1;
        }
        let bound = m.final_base * (m.rate * i as f64).exp();
        if !(d < bound && bound <= m.envelope * (1.0 + 1e-12)) {
            self.final_bad += 1;
        }
        self.sum += m.slope * d + m.per_step;
    }

    fn stop(&mut self) {
        self.active = false;
    }

    fn martingale_step(&mut self, prev: &[i64], next: &[i64], drift: &[f64]) {
        for (k, mk) in self.martingale.iter_mut().enumerate() {
            *mk += (next[k] - prev[k]) as f64 - drift[k];
            self.max_martingale = self.max_martingale.max(mk.abs());
        }
    }

    fn finish(self) -> MonitorSummary {
        MonitorSummary {
            sup_deviation: self.sup,
            checked_through: self.checked_through,
            max_martingale: self.max_martingale,
            martingale_event: self.max_martingale < self.monitor.lambda_n,
            replay_steps: self.steps,
            replay_recurrence_violations: self.rec_bad,
            replay_final_violations: self.final_bad,
        }
    }
}

/// Options for [`simulate`] and [`run_ensemble`].
#[derive(Clone, Debug)]
pub struct SimOptions<'a> {
    pub recording: Recording,
    pub monitor: Option<&'a Monitor<'a>>,
    pub event: Option<EventPredicate>,
}

impl<'a> SimOptions<'a> {
    /// Thinned recording, no monitor, side event taken from the spec.
    pub fn new(spec: &ProcessSpec) -> Self {
        Self { recording: Recording::thinned(spec.n), monitor: None, event: spec.event }
    }

    pub fn full(mut self) -> Self {
        self.recording = Recording::Full;
        self
    }

    pub fn with_monitor(mut self, monitor: &'a Monitor<'a>) -> Self {
        self.monitor = Some(monitor);
        self
    }

    pub fn with_event(mut self, event: Option<EventPredicate>) -> Self {
        self.event = event;
        self
    }
}

/// A simulated path up to the stopping index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub n: u64,
    pub initial: Vec<i64>,
    /// `I_D`.
    pub stop_index: usize,
    /// True if the path left the domain before `floor(T n)`.
    pub exited_domain: bool,
    /// First `i` where the side event failed, if any.
    pub event_index: Option<usize>,
    pub full: bool,
    pub rows: Vec<PathRow>,
    pub flags: Vec<FlagRecord>,
    pub failure: Option<StepFailure>,
    pub monitor: Option<MonitorSummary>,
}

impl Trajectory {
    pub fn is_valid(&self) -> bool {
        self.failure.is_none()
    }

    pub fn final_counts(&self) -> &[i64] {
        &self.rows.last().expect("trajectory has at least one row").counts
    }

    /// Steps at which the hypotheses are checked: `i < I_D`, and `i < I`
    /// when a side event is active.
    pub fn checked_limit(&self) -> usize {
        self.event_index.map_or(self.stop_index, |e| e.min(self.stop_index))
    }

    /// CSV with columns `i, Y_1..Y_a, drift_1..drift_a, flags`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let a = self.initial.len();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["i".to_string()];
        header.extend((1..=a).map(|k| format!("Y_{k}")));
        header.extend((1..=a).map(|k| format!("drift_{k}")));
        header.push("flags".into());
        wtr.write_record(&header)?;
        let mut flags = self.flags.iter().peekable();
        for row in &self.rows {
            while flags.next_if(|f| f.index < row.index).is_some() {}
            let f = flags.peek().filter(|f| f.index == row.index).map(|f| f.flags).unwrap_or_default();
            let mut rec = vec![row.index.to_string()];
            rec.extend(row.counts.iter().map(|c| c.to_string()));
            if row.drift.is_empty() {
                rec.extend(std::iter::repeat_n(String::new(), a));
            } else {
                rec.extend(row.drift.iter().map(|d| sig12(*d)));
            }
            rec.push(f.to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Per-trajectory seed: a splitmix64 hash of `(base_seed, index)`.
pub fn derive_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(base_seed ^ splitmix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs one trajectory from the plugin's initial state.
///
/// Stops at `I_D`. Step flags are recorded for every step; the extension
/// flags (`average`, `tail`, `hard-bound`) only when the spec carries the
/// corresponding parameters.
pub fn simulate<P: Process>(plugin: &P, spec: &ProcessSpec, seed: u64, options: &SimOptions<'_>) -> Result<Trajectory> {
    let a = spec.a;
    check_dim(a, plugin.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n_f64();
    let cap = spec.step_cap(spec.domain.t_hi);
    let truncation = spec.truncation();

    let mut state = plugin.initial_state();
    let mut counts = vec![0i64; a];
    plugin.observe(&state, &mut counts);
    let initial = counts.clone();

    let mut scaled = vec![0.0; a];
    let mut drift = vec![0.0; a];
    let mut target = vec![0.0; a];
    let mut moment = vec![0.0; a];
    let mut prev = vec![0i64; a];
    let mut rows = Vec::new();
    let mut flags = Vec::new();
    let mut failure = None;
    let mut event_index = None;
    let mut monitor = options.monitor.map(|m| MonitorState::new(m, a));

    let mut i = 0usize;
    let exited = loop {
        let t = i as f64 / n;
        for (s, &c) in scaled.iter_mut().zip(&counts) {
            *s = c as f64 / n;
        }
        let inside = spec.domain.contains(t, &scaled);
        if event_index.is_none() && options.event.is_some_and(|e| !e.holds(&counts)) {
            event_index = Some(i);
        }
        if let Some(m) = monitor.as_mut() {
            m.observe(i, &counts);
            if event_index.is_some() {
                m.stop();
            }
        }
        if i >= cap || !inside {
            rows.push(PathRow { index: i, counts: counts.clone(), drift: Vec::new() });
            break !inside && i < cap;
        }

        let mut f = StepFlags::empty();
        plugin.drift(&state, &mut drift);
        spec.drift.eval(t, &scaled, &mut target)?;
        if drift
            .iter()
            .zip(&target)
            .any(|(d, g)| (d - g).abs() > spec.delta + TREND_SLACK * d.abs().max(g.abs()).max(1.0))
        {
            f.insert(StepFlags::TREND);
        }
        if let Some(b) = spec.b {
            plugin.mean_abs_step(&state, &mut moment);
            if moment.iter().any(|&m| m > b) {
                f.insert(StepFlags::AVERAGE);
            }
        }
        if let Some(tr) = truncation {
            plugin.exceed_probability(&state, spec.beta, &mut moment);
            if moment.iter().any(|&p| p > tr.gamma) {
                f.insert(StepFlags::TAIL);
            }
        }
        if options.recording.keeps(i) {
            rows.push(PathRow { index: i, counts: counts.clone(), drift: drift.clone() });
        }

        prev.copy_from_slice(&counts);
        if let Err(e) = plugin.step(&mut state, &mut rng) {
            failure = Some(StepFailure { index: i, message: e.0 });
            rows.push(PathRow { index: i, counts: counts.clone(), drift: Vec::new() });
            if rows.len() >= 2 && rows[rows.len() - 2].index == i {
                rows.remove(rows.len() - 2);
            }
            break false;
        }
        plugin.observe(&state, &mut counts);
        for (c, p) in counts.iter().zip(&prev) {
            let jump = (c - p).abs() as f64;
            if jump > spec.beta {
                f.insert(StepFlags::BOUND);
            }
            if truncation.is_some_and(|tr| jump > tr.big_b) {
                f.insert(StepFlags::HARD_BOUND);
            }
        }
        if !f.is_empty() {
            flags.push(FlagRecord { index: i, flags: f, counts: prev.clone() });
        }
        if event_index.is_none() {
            if let Some(m) = monitor.as_mut() {
                m.martingale_step(&prev, &counts, &drift);
            }
        }
        i += 1;
    };

    Ok(Trajectory {
        seed,
        n: spec.n,
        initial,
        stop_index: i,
        exited_domain: exited,
        event_index,
        full: options.recording == Recording::Full,
        rows,
        flags,
        failure,
        monitor: monitor.map(MonitorState::finish),
    })
}

/// Independent trajectories sharing one spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub spec: ProcessSpec,
    pub base_seed: u64,
    pub trajectories: Vec<Trajectory>,
}

/// Simulates `count` trajectories in parallel; trajectory `j` uses
/// `derive_seed(base_seed, j)`, so the result is independent of scheduling.
pub fn run_ensemble<P: Process>(
    plugin: &P,
    spec: &ProcessSpec,
    count: usize,
    base_seed: u64,
    options: &SimOptions<'_>,
) -> Result<Ensemble> {
    if count == 0 {
        return Err(Error::InvalidParameter("ensemble needs at least one trajectory".into()));
    }
    let trajectories = (0..count)
        .into_par_iter()
        .map(|j| simulate(plugin, spec, derive_seed(base_seed, j as u64), options))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { spec: spec.clone(), base_seed, trajectories })
}

/// Martingale part `M_k(j) = sum_{i<j} [dY_k(i) - E(dY_k(i) | F_i)]` for
/// `j = 0..=I_D`, indexed `[j][k]`. Needs a fully recorded path.
pub fn doob_decompose(traj: &Trajectory) -> Result<Vec<Vec<f64>>> {
    if !traj.full {
        return Err(Error::MissingRecord("path was thinned; simulate with full recording".into()));
    }
    let a = traj.initial.len();
    let mut out = Vec::with_capacity(traj.rows.len());
    let mut m = vec![0.0; a];
    out.push(m.clone());
    for (j, w) in traj.rows.windows(2).enumerate() {
        let (cur, next) = (&w[0], &w[1]);
        if cur.index != j || next.index != j + 1 || cur.drift.len() != a {
            return Err(Error::MissingRecord(format!("no drift record for step {j}")));
        }
        for k in 0..a {
            m[k] += (next.counts[k] - cur.counts[k]) as f64 - cur.drift[k];
        }
        out.push(m.clone());
    }
    Ok(out)
}

/// Largest relative error of `Y_k(j) = M_k(j) + Y_k(0) + sum_{i<j} drift_k(i)`
/// over the path, relative to `max(|Y_k(j)|, 1)`.
pub fn doob_identity_residual(traj: &Trajectory, martingale: &[Vec<f64>]) -> Result<f64> {
    if martingale.len() != traj.rows.len() {
        return Err(Error::Dimension { expected: traj.rows.len(), got: martingale.len() });
    }
    let a = traj.initial.len();
    let mut drift_sum = vec![0.0; a];
    let mut worst: f64 = 0.0;
    for (j, row) in traj.rows.iter().enumerate() {
        for k in 0..a {
            let rebuilt = martingale[j][k] + traj.initial[k] as f64 + drift_sum[k];
            let y = row.counts[k] as f64;
            worst = worst.max((rebuilt - y).abs() / y.abs().max(1.0));
        }
        if !row.drift.is_empty() {
            for k in 0..a {
                drift_sum[k] += row.drift[k];
            }
        }
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HypothesisMode {
    /// Every step `i < I_D` must satisfy the hypotheses.
    Strict,
    /// Only steps with `i < floor(T n)` whose deviation is still below the
    /// envelope `3 e^{L T} lambda n` are checked; steps beyond `sigma n`,
    /// where the ODE solution is not available, are exempt as well.
    ProofStructure,
}

/// Violation counts per hypothesis for one or more trajectories.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisSummary {
    pub trend: usize,
    pub bound: usize,
    pub average: usize,
    pub tail: usize,
    pub hard_bound: usize,
    pub exempt: usize,
    pub first_violation: Option<usize>,
}

impl HypothesisSummary {
    pub fn merge(&mut self, other: &Self) {
        self.trend += other.trend;
        self.bound += other.bound;
        self.average += other.average;
        self.tail += other.tail;
        self.hard_bound += other.hard_bound;
        self.exempt += other.exempt;
        self.first_violation = match (self.first_violation, other.first_violation) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        };
    }

    /// Number of violated steps relevant to the plain theorem: trend and bound.
    pub fn plain(&self) -> usize {
        self.trend + self.bound
    }
}

/// Summarises the recorded flags of `traj` under `mode`.
pub fn check_hypotheses(
    traj: &Trajectory,
    spec: &ProcessSpec,
    mode: HypothesisMode,
    solution: Option<&OdeSolution>,
) -> Result<HypothesisSummary> {
    let monitor = match (mode, solution) {
        (HypothesisMode::ProofStructure, None) => {
            return Err(Error::InvalidParameter("proof-structure mode needs an ODE solution".into()))
        }
        (HypothesisMode::ProofStructure, Some(sol)) => Some(Monitor::new(spec, sol, None)),
        (HypothesisMode::Strict, _) => None,
    };
    let cap = spec.step_cap(spec.domain.t_hi);
    let limit = traj.checked_limit();
    let mut scratch = vec![0.0; spec.a];
    let mut s = HypothesisSummary::default();
    for rec in traj.flags.iter().filter(|r| r.index < limit) {
        if let Some(m) = &monitor {
            let within = rec.index < cap
                && m.deviation(rec.index, &rec.counts, &mut scratch).is_some_and(|d| d < m.envelope());
            if !within {
                s.exempt += 1;
                continue;
            }
        }
        let f = rec.flags;
        s.trend += f.contains(StepFlags::TREND) as usize;
        s.bound += f.contains(StepFlags::BOUND) as usize;
        s.average += f.contains(StepFlags::AVERAGE) as usize;
        s.tail += f.contains(StepFlags::TAIL) as usize;
        s.hard_bound += f.contains(StepFlags::HARD_BOUND) as usize;
        if s.first_violation.is_none() {
            s.first_violation = Some(rec.index);
        }
    }
    Ok(s)
}
