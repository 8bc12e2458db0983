//! Monte Carlo verification: compares the empirical frequency of large
//! deviations `max_i |Y(i) - y(i/n) n| >= 3 e^{L T} lambda n` against the
//! failure probability of the selected bound.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bounds::{freedman_failure_probability, theorem_failure_probability, truncated_failure_probability};
use crate::error::{Error, Result};
use crate::numfmt::sig12;
use crate::ode::{boundary_margin, check_lambda_admissible, compute_rt, solve_ode, Admissibility, Constants, OdeSolution};
use crate::process::{AnyProcess, Process};
use crate::sim::{
    check_hypotheses, run_ensemble, HypothesisMode, HypothesisSummary, Monitor, Recording, SimOptions, StepFailure,
    Trajectory,
};
use crate::spec::{ProcessSpec, Truncation};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Which form of the bound is being verified.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyMode {
    #[default]
    Plain,
    /// Hypotheses only required while the spec's event predicate holds.
    SideEvents,
    /// Uses `E(|dY_k| | F_i) <= b`.
    Averaged,
    /// Uses the tail probability `gamma`, hard bound `B` and allowance `x`.
    Truncated,
}

impl VerifyMode {
    pub const ALL: [Self; 4] = [Self::Plain, Self::SideEvents, Self::Averaged, Self::Truncated];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Plain => "plain",
            Self::SideEvents => "side-events",
            Self::Averaged => "averaged",
            Self::Truncated => "truncated",
        }
    }

    /// Accepts the tag in any case, with `_` or `-` separators.
    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown mode {s:?}")))
    }

    /// Violations of the hypotheses this mode relies on.
    pub fn violations(self, h: &HypothesisSummary) -> usize {
        match self {
            Self::Plain | Self::SideEvents => h.trend + h.bound,
            Self::Averaged => h.trend + h.bound + h.average,
            Self::Truncated => h.trend + h.tail + h.hard_bound,
        }
    }
}

impl fmt::Display for VerifyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VerifyOptions {
    pub mode: VerifyMode,
    pub count: usize,
    pub seed: u64,
    pub hypothesis_mode: HypothesisMode,
    /// Keep per-trajectory results in the report.
    pub per_trajectory: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            mode: VerifyMode::Plain,
            count: 100,
            seed: 0,
            hypothesis_mode: HypothesisMode::ProofStructure,
            per_trajectory: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Passed,
    Failed,
    HypothesesFailed,
    /// `sigma = 0`: the conclusion covers only the initial point.
    Vacuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult {
    pub seed: u64,
    pub stop_index: usize,
    pub exited_domain: bool,
    pub event_index: Option<usize>,
    pub sup_deviation: f64,
    pub checked_through: usize,
    pub max_martingale: f64,
    pub martingale_event: bool,
    pub replay_steps: usize,
    pub replay_recurrence_violations: usize,
    pub replay_final_violations: usize,
    pub failed: bool,
    pub invalid: Option<StepFailure>,
    pub hypotheses: HypothesisSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub mode: VerifyMode,
    pub process: String,
    pub a: usize,
    pub n: u64,
    pub lambda: f64,
    pub y_hat: Vec<f64>,
    pub constants: Constants,
    pub admissibility: Admissibility,
    pub initial_offset: f64,
    /// `3 e^{L T} lambda n`.
    pub envelope: f64,
    pub failure_probability: f64,
    pub count: usize,
    pub seed: u64,
    pub failure_count: usize,
    pub failure_fraction: f64,
    /// Trajectories on which `max_k max_j |M_k(j)| >= lambda n`.
    pub martingale_failures: usize,
    pub invalid_count: usize,
    pub replay_violations: usize,
    pub hypothesis_mode: HypothesisMode,
    pub hypotheses: HypothesisSummary,
    pub hypothesis_violations: usize,
    pub within_bound: bool,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectories: Vec<TrajectoryResult>,
}

impl Report {
    /// Failure probability clamped to `[0, 1]`.
    pub fn displayed_probability(&self) -> f64 {
        self.failure_probability.min(1.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.constants;
        writeln!(f, "process      {} (a = {}, n = {})", self.process, self.a, self.n)?;
        writeln!(f, "mode         {}", self.mode)?;
        writeln!(f, "R            {}", sig12(c.r))?;
        writeln!(f, "T            {}", sig12(c.horizon))?;
        writeln!(f, "sigma        {}", sig12(c.sigma))?;
        writeln!(f, "lambda       {}", self.admissibility.inequality)?;
        writeln!(f, "envelope     {}", sig12(self.envelope))?;
        writeln!(f, "probability  {}", sig12(self.displayed_probability()))?;
        writeln!(
            f,
            "failures     {}/{} ({})",
            self.failure_count,
            self.count,
            sig12(self.failure_fraction)
        )?;
        writeln!(f, "not M        {}", self.martingale_failures)?;
        writeln!(f, "invalid      {}", self.invalid_count)?;
        writeln!(f, "violations   {}", self.hypothesis_violations)?;
        write!(f, "status       {}", serde_json::to_value(self.status).map_err(|_| fmt::Error)?.as_str().unwrap_or(""))
    }
}

/// `fraction <= p + 3 sqrt(p (1 - p) / count)` with `p` clamped to `[0, 1]`.
pub fn within_bound(failures: usize, count: usize, p: f64) -> bool {
    let p = p.clamp(0.0, 1.0);
    let frac = failures as f64 / count as f64;
    frac <= p + 3.0 * (p * (1.0 - p) / count as f64).sqrt()
}

fn mode_parameters(spec: &ProcessSpec, mode: VerifyMode) -> Result<(f64, Option<Truncation>)> {
    let horizon = spec.domain.t_hi;
    match mode {
        VerifyMode::Plain => Ok((theorem_failure_probability(spec.a, spec.n, spec.lambda, horizon, spec.beta), None)),
        VerifyMode::SideEvents => {
            if spec.event.is_none() {
                return Err(Error::InvalidSpec("side-events mode needs an event predicate".into()));
            }
            Ok((theorem_failure_probability(spec.a, spec.n, spec.lambda, horizon, spec.beta), None))
        }
        VerifyMode::Averaged => {
            let b = spec.b.ok_or_else(|| Error::InvalidSpec("averaged mode needs b".into()))?;
            Ok((freedman_failure_probability(spec.a, spec.n, spec.lambda, horizon, spec.beta, b), None))
        }
        VerifyMode::Truncated => {
            let tr = spec
                .truncation()
                .ok_or_else(|| Error::InvalidSpec("truncated mode needs gamma, B and x".into()))?;
            let p = truncated_failure_probability(spec.a, spec.n, spec.lambda, horizon, spec.beta, tr.gamma, tr.x)?;
            Ok((p, Some(tr)))
        }
    }
}

/// The ODE side of a verification: constants, admissibility and solution.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub admissibility: Admissibility,
    pub solution: OdeSolution,
    pub failure_probability: f64,
    pub truncation: Option<Truncation>,
}

/// Computes `R`, `T`, checks `lambda` and solves the ODE. Refuses an
/// inadmissible `lambda`.
pub fn prepare(spec: &ProcessSpec, mode: VerifyMode) -> Result<Prepared> {
    spec.validate()?;
    let (p, truncation) = mode_parameters(spec, mode)?;
    let (r, horizon) = compute_rt(spec)?;
    let admissibility = check_lambda_admissible(spec, r, horizon, truncation);
    if !admissibility.admissible {
        return Err(Error::Inadmissible {
            lambda: spec.lambda,
            threshold: admissibility.threshold,
            inequality: admissibility.inequality,
        });
    }
    let solution = solve_ode(spec, r, horizon)?;
    Ok(Prepared { admissibility, solution, failure_probability: p, truncation })
}

/// Verifies `spec` with its registered plugin.
pub fn verify(spec: &ProcessSpec, options: &VerifyOptions) -> Result<Report> {
    let plugin = AnyProcess::from_spec(spec)?;
    verify_with(&plugin, spec, options)
}

/// Verifies `spec` with an explicit plugin.
pub fn verify_with<P: Process>(plugin: &P, spec: &ProcessSpec, options: &VerifyOptions) -> Result<Report> {
    let prepared = prepare(spec, options.mode)?;
    let mut counts = vec![0i64; spec.a];
    plugin.observe(&plugin.initial_state(), &mut counts);
    if !spec.check_initial_condition(&counts)? {
        return Err(Error::InitialCondition(format!(
            "max_k |Y_k(0) - y_hat_k n| = {} exceeds lambda n = {}",
            sig12(spec.initial_offset(&counts)),
            sig12(spec.lambda * spec.n_f64())
        )));
    }
    let monitor = Monitor::new(spec, &prepared.solution, prepared.truncation);
    let event = if options.mode == VerifyMode::SideEvents { spec.event } else { None };
    let sim = SimOptions { recording: Recording::Every(usize::MAX), monitor: Some(&monitor), event };
    let ensemble = run_ensemble(plugin, spec, options.count, options.seed, &sim)?;
    let solution = Some(&prepared.solution);

    let mut results = Vec::with_capacity(ensemble.trajectories.len());
    let mut total = HypothesisSummary::default();
    for tr in &ensemble.trajectories {
        let h = check_hypotheses(tr, spec, options.hypothesis_mode, solution)?;
        total.merge(&h);
        results.push(trajectory_result(tr, h, monitor.envelope()));
    }
    let envelope = monitor.envelope();
    Ok(assemble(spec, options, prepared, &counts, envelope, total, results))
}

fn trajectory_result(tr: &Trajectory, hypotheses: HypothesisSummary, envelope: f64) -> TrajectoryResult {
    let m = tr.monitor.clone().expect("verification runs with a monitor");
    TrajectoryResult {
        seed: tr.seed,
        stop_index: tr.stop_index,
        exited_domain: tr.exited_domain,
        event_index: tr.event_index,
        sup_deviation: m.sup_deviation,
        checked_through: m.checked_through,
        max_martingale: m.max_martingale,
        martingale_event: m.martingale_event,
        replay_steps: m.replay_steps,
        replay_recurrence_violations: m.replay_recurrence_violations,
        replay_final_violations: m.replay_final_violations,
        failed: m.sup_deviation >= envelope,
        invalid: tr.failure.clone(),
        hypotheses,
    }
}

fn assemble(
    spec: &ProcessSpec,
    options: &VerifyOptions,
    prepared: Prepared,
    initial: &[i64],
    envelope: f64,
    hypotheses: HypothesisSummary,
    results: Vec<TrajectoryResult>,
) -> Report {
    let count = results.len();
    let failure_count = results.iter().filter(|r| r.failed).count();
    let martingale_failures = results.iter().filter(|r| !r.martingale_event).count();
    let invalid_count = results.iter().filter(|r| r.invalid.is_some()).count();
    // the Gronwall chain is only implied on the martingale event
    let replay_violations = results
        .iter()
        .filter(|r| r.martingale_event && r.invalid.is_none())
        .map(|r| r.replay_recurrence_violations + r.replay_final_violations)
        .sum();
    let hypothesis_violations = options.mode.violations(&hypotheses);
    let p = prepared.failure_probability;
    let within = within_bound(failure_count, count, p);
    let constants = prepared.solution.constants;
    let status = if constants.sigma == 0.0 {
        Status::Vacuous
    } else if hypothesis_violations > 0 || invalid_count > 0 {
        Status::HypothesesFailed
    } else if within {
        Status::Passed
    } else {
        Status::Failed
    };
    Report {
        schema_version: REPORT_SCHEMA_VERSION,
        mode: options.mode,
        process: spec.drift.name().into(),
        a: spec.a,
        n: spec.n,
        lambda: spec.lambda,
        y_hat: spec.y_hat.clone(),
        constants,
        admissibility: prepared.admissibility,
        initial_offset: spec.initial_offset(initial),
        envelope,
        failure_probability: p,
        count,
        seed: options.seed,
        failure_count,
        failure_fraction: failure_count as f64 / count as f64,
        martingale_failures,
        invalid_count,
        replay_violations,
        hypothesis_mode: options.hypothesis_mode,
        hypotheses,
        hypothesis_violations,
        within_bound: within,
        status,
        trajectories: if options.per_trajectory { results } else { Vec::new() },
    }
}

/// Verification against several ODE anchors `y_hat` at once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiAnchorReport {
    pub schema_version: u32,
    pub count: usize,
    /// Trajectories that fail against at least one anchor.
    pub joint_failure_count: usize,
    /// Union bound: the number of anchors times the per-anchor probability.
    pub failure_probability: f64,
    pub within_bound: bool,
    pub anchors: Vec<Report>,
}

/// Runs [`verify_with`] once per anchor on the same seed, so every anchor sees
/// the same trajectories. Anchors must lie in `D` at time 0 and within
/// `lambda n` of the plugin's initial counts.
pub fn verify_multi_anchor<P: Process>(
    plugin: &P,
    spec: &ProcessSpec,
    anchors: &[Vec<f64>],
    options: &VerifyOptions,
) -> Result<MultiAnchorReport> {
    if anchors.is_empty() {
        return Err(Error::InvalidParameter("no anchors given".into()));
    }
    let mut counts = vec![0i64; spec.a];
    plugin.observe(&plugin.initial_state(), &mut counts);
    let mut specs = Vec::with_capacity(anchors.len());
    for (index, y) in anchors.iter().enumerate() {
        let s = spec
            .with_anchor(y.clone())
            .map_err(|e| Error::AnchorRejected { index, reason: e.to_string() })?;
        if !s.check_initial_condition(&counts)? {
            return Err(Error::AnchorRejected {
                index,
                reason: format!("offset {} exceeds lambda n", sig12(s.initial_offset(&counts))),
            });
        }
        specs.push(s);
    }
    let per = VerifyOptions { per_trajectory: true, ..*options };
    let reports = specs.iter().map(|s| verify_with(plugin, s, &per)).collect::<Result<Vec<_>>>()?;
    let count = options.count;
    let joint_failure_count = (0..count)
        .filter(|&j| reports.iter().any(|r| r.trajectories[j].failed))
        .count();
    let p = reports.iter().map(|r| r.failure_probability).sum::<f64>();
    let anchors = reports
        .into_iter()
        .map(|mut r| {
            if !options.per_trajectory {
                r.trajectories.clear();
            }
            r
        })
        .collect();
    Ok(MultiAnchorReport {
        schema_version: REPORT_SCHEMA_VERSION,
        count,
        joint_failure_count,
        failure_probability: p,
        within_bound: within_bound(joint_failure_count, count, p),
        anchors,
    })
}

/// `3 e^{L T} lambda n` for the spec, with `T` the domain's upper time.
pub fn envelope(spec: &ProcessSpec) -> f64 {
    boundary_margin(spec.lambda, spec.lipschitz, spec.domain.t_hi) * spec.n_f64()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::model::DriftModel;

    fn bins(n: u64, lambda: f64) -> ProcessSpec {
        ProcessSpec {
            schema: 1,
            a: 1,
            n,
            drift: DriftModel::BallsInBins,
            lipschitz: 1.0,
            delta: 0.0,
            beta: 1.0,
            lambda,
            y_hat: vec![1.0],
            domain: Domain::new(-0.2, 1.0, vec![0.05], vec![1.2]).unwrap(),
            b: None,
            gamma: None,
            big_b: None,
            x: None,
            event: None,
        }
    }

    #[test]
    fn mode_tags() {
        assert_eq!(VerifyMode::parse("Side_Events").unwrap(), VerifyMode::SideEvents);
        assert_eq!(VerifyMode::parse("truncated").unwrap(), VerifyMode::Truncated);
        assert!(VerifyMode::parse("other").is_err());
        for m in VerifyMode::ALL {
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
    }

    #[test]
    fn within_bound_tolerance() {
        assert!(within_bound(0, 100, 0.0));
        assert!(!within_bound(1, 100, 0.0));
        // p = 0.01, count 100: 0.01 + 3 sqrt(0.0099 / 100) = 0.0398
        assert!(within_bound(3, 100, 0.01));
        assert!(!within_bound(4, 100, 0.01));
        assert!(within_bound(100, 100, 7.0));
    }

    #[test]
    fn refuses_small_lambda() {
        let s = bins(1000, 1e-4);
        match verify(&s, &VerifyOptions::default()) {
            Err(Error::Inadmissible { threshold, .. }) => assert!(threshold > 1e-4),
            other => panic!("expected inadmissible, got {other:?}"),
        }
    }

    #[test]
    fn mode_requirements() {
        let s = bins(1000, 0.05);
        for mode in [VerifyMode::Averaged, VerifyMode::Truncated, VerifyMode::SideEvents] {
            let o = VerifyOptions { mode, ..Default::default() };
            assert!(matches!(verify(&s, &o), Err(Error::InvalidSpec(_))), "{mode}");
        }
    }

    #[test]
    fn small_bins_run() {
        let s = bins(20_000, 0.01);
        let o = VerifyOptions { count: 8, seed: 3, ..Default::default() };
        let r = verify(&s, &o).unwrap();
        assert_eq!(r.count, 8);
        assert_eq!(r.trajectories.len(), 8);
        assert_eq!(r.failure_count, 0);
        assert_eq!(r.hypothesis_violations, 0);
        assert_eq!(r.status, Status::Passed);
        let back = Report::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn anchors_share_trajectories() {
        let s = bins(20_000, 0.01);
        let p = AnyProcess::from_spec(&s).unwrap();
        let o = VerifyOptions { count: 4, seed: 9, ..Default::default() };
        let m = verify_multi_anchor(&p, &s, &[vec![1.0], vec![0.995]], &o).unwrap();
        assert_eq!(m.anchors.len(), 2);
        let seeds = |r: &Report| r.trajectories.iter().map(|t| t.seed).collect::<Vec<_>>();
        assert_eq!(seeds(&m.anchors[0]), seeds(&m.anchors[1]));
        match verify_multi_anchor(&p, &s, &[vec![1.0], vec![0.5]], &o) {
            Err(Error::AnchorRejected { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected rejection, got {other:?}"),
        }
        match verify_multi_anchor(&p, &s, &[vec![1.5]], &o) {
            Err(Error::AnchorRejected { index, .. }) => assert_eq!(index, 0),
            other => panic!("expected rejection, got {other:?}"),
        }
    }
}
