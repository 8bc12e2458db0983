//! Acceptance suite: one line per criterion, nonzero exit if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use dem_core::bounds::{
    azuma_bound, binomial_tail, gronwall_discrete_bound, theorem_failure_probability, truncation_tail_remark_bound,
    GronwallDiscreteParams,
};
use dem_core::model::DriftModel;
use dem_core::ode::{compute_rt, integrate, solve_ode};
use dem_core::process::BallsInBins;
use dem_core::sim::{doob_decompose, doob_identity_residual, run_ensemble, SimOptions};
use dem_core::verify::{verify, Report, VerifyMode, VerifyOptions};
use dem_core::ProcessSpec;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn rel(x: f64, y: f64) -> f64 {
    (x - y).abs() / y.abs()
}

fn closed_forms() -> Outcome {
    let e = std::f64::consts::E;
    let errs = [
        rel(azuma_bound(100, 1.0, 20.0).unwrap(), 2.0 * (-2.0f64).exp()),
        rel(theorem_failure_probability(2, 1_000_000, 0.01, 1.0, 1.0), 4.0 * (-12.5f64).exp()),
        rel(gronwall_discrete_bound(GronwallDiscreteParams { c: 2.0, b: 1.0, a: 0.5, m: 4 }).unwrap(), 4.0 * e * e),
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    outcome(worst <= 1e-12, format!("max relative error {worst:.3e}"))
}

fn discrete_gronwall() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0;
    for _ in 0..10_000 {
        let a = rng.random_range(1e-3..1.0);
        let b = if rng.random::<bool>() { rng.random_range(0.0..2.0) } else { 0.0 };
        let c = if rng.random::<bool>() { rng.random_range(0.0..5.0) } else { 0.0 };
        let m = rng.random_range(1..200u64);
        // x_j = c + sum_{i<j} (a x_i + b) - u_j with u_j > 0
        let (mut sum, mut x) = (0.0f64, 0.0f64);
        for _ in 0..=m {
            let rhs = c + sum;
            x = rhs - rng.random_range(1e-9..1.0) * rhs.abs().max(1e-6);
            sum += a * x + b;
        }
        let bound = gronwall_discrete_bound(GronwallDiscreteParams { c, b, a, m }).unwrap();
        if !(x < bound) {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("{violations} violations in 10000 sequences"))
}

fn azuma_tail() -> Outcome {
    const M: usize = 1000;
    const RUNS: usize = 100_000;
    let ts = [50i64, 100, 150];
    let mut hits = [0usize; 3];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..RUNS {
        let (mut s, mut max) = (0i64, 0i64);
        let mut bits = 0u64;
        for j in 0..M {
            if j % 64 == 0 {
                bits = rng.next_u64();
            }
            s += if bits & 1 == 1 { 1 } else { -1 };
            bits >>= 1;
            max = max.max(s.abs());
        }
        for (h, t) in hits.iter_mut().zip(ts) {
            *h += (max >= t) as usize;
        }
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for (h, t) in hits.iter().zip(ts) {
        let freq = *h as f64 / RUNS as f64;
        let bound = azuma_bound(M as u64, 1.0, t as f64).unwrap();
        ok &= freq <= bound;
        parts.push(format!("t={t}: {freq:.5} <= {bound:.5}"));
    }
    outcome(ok, parts.join(", "))
}

fn exponential_moment() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0;
    for _ in 0..100_000 {
        let c: f64 = rng.random_range(1e-3..10.0);
        let x = rng.random_range(-c..=c);
        let lambda = rng.random_range(-10.0..10.0) / c;
        let lhs = (lambda * x).exp();
        let rhs = x / (2.0 * c) * ((lambda * c).exp() - (-lambda * c).exp()) + ((lambda * c).powi(2) / 2.0).exp();
        if lhs > rhs * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    outcome(violations == 0, format!("{violations} violations in 100000 draws"))
}

fn ode_engine() -> Outcome {
    let decay = DriftModel::Linear { matrix: vec![vec![-1.0]], offset: vec![0.0] };
    let err = |h: f64| {
        let steps = (1.0 / h).round() as usize;
        let y = integrate(&decay, 0.0, &[1.0], h, steps).unwrap();
        (y[steps][0] - (-1.0f64).exp()).abs()
    };
    let fine = err(1e-3);
    // error ratio measured where truncation error dominates roundoff
    let ratio = err(0.1) / err(0.05);

    let mut spec = common::load_spec("degree_process.json");
    spec.drift = DriftModel::DegreeProcess { max_degree: 5 };
    spec.a = 6;
    spec.y_hat = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    spec.domain.lo = vec![-0.05; 6];
    spec.domain.hi = vec![1.05; 6];
    let (r, t) = compute_rt(&spec).unwrap();
    let sol = solve_ode(&spec, r, t).unwrap();
    let mut y = vec![0.0; 6];
    sol.value_at(0.5, &mut y).unwrap();
    let mut degree_err: f64 = 0.0;
    let (t, mut fact) = (0.5f64, 1.0);
    for (k, v) in y.iter().enumerate() {
        if k > 0 {
            fact *= k as f64;
        }
        let exact = (2.0 * t).powi(k as i32) * (-2.0 * t).exp() / fact;
        degree_err = degree_err.max((v - exact).abs());
    }
    outcome(
        fine < 1e-10 && (14.0..=18.0).contains(&ratio) && degree_err < 1e-8,
        format!("|y(1) - 1/e| = {fine:.2e}, ratio {ratio:.3}, degree error {degree_err:.2e}"),
    )
}

fn sigma() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for lambda in [1e-3, 1e-4] {
        let mut spec = common::load_spec("balls_in_bins.json");
        spec.lambda = lambda;
        let (r, t) = compute_rt(&spec).unwrap();
        let sol = solve_ode(&spec, r, t).unwrap();
        let expected = 2.0 - 3.0 * (2.0f64).exp() * lambda;
        let gap = (sol.sigma() - expected).abs();
        ok &= gap <= sol.step * (1.0 + 1e-9);
        parts.push(format!("lambda={lambda:e}: sigma {:.6} vs {expected:.6} (h {:e})", sol.sigma(), sol.step));
    }
    outcome(ok, parts.join(", "))
}

fn drift_oracles() -> Outcome {
    let (worst, states) = common::all_plugin_oracles();
    outcome(worst <= 1e-12, format!("max gap {worst:.2e} over {states} states"))
}

fn doob_identity() -> Outcome {
    let mut spec = common::load_spec("balls_in_bins.json");
    spec.domain.t_hi = 1.0;
    let plugin = BallsInBins::new(10_000);
    let ens = run_ensemble(&plugin, &spec, 100, 8, &SimOptions::new(&spec).full()).unwrap();
    let mut worst: f64 = 0.0;
    for tr in &ens.trajectories {
        let m = doob_decompose(tr).unwrap();
        worst = worst.max(doob_identity_residual(tr, &m).unwrap());
    }
    outcome(worst <= 1e-9, format!("max relative residual {worst:.2e} over 100 trajectories"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

struct EndToEnd {
    bins: Report,
    degree: Report,
    degree_wide: Report,
}

fn run_end_to_end() -> EndToEnd {
    let run = |name: &str, count: usize| {
        let spec = common::load_spec(name);
        verify(&spec, &VerifyOptions { count, seed: 2024, ..Default::default() }).unwrap()
    };
    EndToEnd {
        bins: run("balls_in_bins_1e5.json", 200),
        degree: run("degree_process.json", 100),
        degree_wide: run("degree_process_wide.json", 100),
    }
}

fn theorem_end_to_end(e: &EndToEnd) -> Outcome {
    let b = &e.bins;
    let n = b.n as f64;
    let strict = 3.0 * b.constants.sigma.exp() * b.lambda * n;
    let over = b.trajectories.iter().filter(|t| t.sup_deviation >= strict).count();
    let med = median(b.trajectories.iter().map(|t| t.sup_deviation).collect());
    let p_err = rel(b.failure_probability, 2.0 * (-5.0f64).exp());
    let degree_over = e.degree.failure_count + e.degree_wide.failure_count;
    let ok = over == 0
        && b.failure_count == 0
        && med < 0.01 * n
        && p_err <= 1e-12
        && degree_over == 0
        && b.hypothesis_violations + e.degree.hypothesis_violations + e.degree_wide.hypothesis_violations == 0;
    outcome(
        ok,
        format!(
            "bins: {over}/200 over 3e^(L sigma) lambda n = {strict:.1}, median sup {med:.1} < {:.0}, bound {:.6}; degree: {degree_over}/200 over envelope",
            0.01 * n,
            b.failure_probability
        ),
    )
}

fn gronwall_replay(e: &EndToEnd) -> Outcome {
    let mut eligible = 0;
    let mut violations = 0;
    for r in [&e.bins, &e.degree, &e.degree_wide] {
        for t in r.trajectories.iter().filter(|t| t.martingale_event) {
            eligible += 1;
            violations += t.replay_recurrence_violations + t.replay_final_violations;
        }
    }
    outcome(
        violations == 0 && eligible > 0,
        format!("{violations} violated steps on {eligible}/400 trajectories with max |M| < lambda n"),
    )
}

fn mode_consistency() -> Outcome {
    let spec: ProcessSpec = {
        let mut s = common::load_spec("balls_in_bins_1e5.json");
        s.n = 20_000;
        s.lambda = 0.01;
        s
    };
    let opts = |mode| VerifyOptions { mode, count: 40, seed: 11, ..Default::default() };
    let plain = verify(&spec, &opts(VerifyMode::Plain)).unwrap();
    let mut truncated = verify(&spec, &opts(VerifyMode::Truncated)).unwrap();
    truncated.mode = VerifyMode::Plain;
    let same = serde_json::to_string(&plain).unwrap() == serde_json::to_string(&truncated).unwrap();

    let mut dominated = 0;
    let mut points = 0;
    for tn in [10.0, 50.0, 100.0, 500.0, 1000.0] {
        for gamma in [1e-4, 1e-3, 1e-2, 5e-2] {
            for x in [0.0, 1.0, 2.0, 5.0, 10.0] {
                points += 1;
                let exact = binomial_tail(tn as u64, gamma, (x + 1.0f64).floor() as u64).unwrap();
                let remark = truncation_tail_remark_bound(tn, gamma, x).unwrap();
                dominated += (exact <= remark * (1.0 + 1e-12)) as usize;
            }
        }
    }
    outcome(
        same && dominated == points,
        format!("reports identical: {same}, remark dominates {dominated}/{points}"),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut end_to_end = None;
    let mut results = Vec::new();
    let mut record = |id: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        println!(
            "criterion {id:>2} {name:<24} {} ({}; {:.1}s)",
            if r.ok { "PASS" } else { "FAIL" },
            r.detail,
            t.elapsed().as_secs_f64()
        );
        results.push(r.ok);
    };
    record(1, "closed-form bounds", &mut closed_forms);
    record(2, "discrete gronwall", &mut discrete_gronwall);
    record(3, "azuma empirical tail", &mut azuma_tail);
    record(4, "exponential moment", &mut exponential_moment);
    record(5, "ode engine", &mut ode_engine);
    record(6, "sigma", &mut sigma);
    record(7, "drift oracles", &mut drift_oracles);
    record(8, "doob identity", &mut doob_identity);
    record(9, "theorem end to end", &mut || {
        let e = run_end_to_end();
        let r = theorem_end_to_end(&e);
        end_to_end = Some(e);
        r
    });
    record(10, "gronwall replay", &mut || match &end_to_end {
        Some(e) => gronwall_replay(e),
        None => outcome(false, "criterion 9 did not produce trajectories"),
    });
    record(11, "mode consistency", &mut mode_consistency);
    let failed = results.iter().filter(|ok| !**ok).count();
    println!(
        "acceptance: {}/{} passed in {:.1}s",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
