use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dem_core::bounds::{
    azuma_bound, binomial_tail, freedman_failure_probability, freedman_two_term_bound, gronwall_continuous_bound,
    gronwall_discrete_bound, stability_bound, theorem_failure_probability, truncated_failure_probability,
    truncation_tail_remark_bound, GronwallDiscreteParams,
};
use dem_core::numfmt::sig12;
use dem_core::ode::{check_lambda_admissible, compute_rt, estimate_lipschitz_lower_bound, solve_ode};
use dem_core::process::AnyProcess;
use dem_core::sim::{run_ensemble, HypothesisMode, SimOptions};
use dem_core::verify::{verify_multi_anchor, verify_with, Status, VerifyMode, VerifyOptions};
use dem_core::{Error, ProcessSpec};

#[derive(Parser)]
#[command(name = "dem", version, about = "Differential equation method: ODE limits, bounds and Monte Carlo checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the limiting ODE and print R, T, sigma, margin and lambda admissibility.
    Solve {
        spec: PathBuf,
        /// Solution CSV path; written to stdout (with the summary on stderr) if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Random point pairs used to sanity-check the declared Lipschitz constant.
        #[arg(long, default_value_t = 2000)]
        lipschitz_samples: usize,
    },
    /// Simulate trajectories and write one CSV per trajectory.
    Simulate {
        spec: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Record every step instead of roughly 1000 rows.
        #[arg(long)]
        full: bool,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Monte Carlo check of the deviation bound; exits 1 if the failure count is out of bounds.
    Verify {
        spec: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ModeArg::Plain)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = HypothesesArg::ProofStructure)]
        hypotheses: HypothesesArg,
        /// Additional ODE anchor `y1,y2,...`; repeat for several.
        #[arg(long)]
        anchor: Vec<String>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Leave per-trajectory results out of the report.
        #[arg(long)]
        summary_only: bool,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Evaluate a single bound.
    Bounds {
        #[command(subcommand)]
        bound: BoundCmd,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Plain,
    SideEvents,
    Averaged,
    Truncated,
}

impl From<ModeArg> for VerifyMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Plain => Self::Plain,
            ModeArg::SideEvents => Self::SideEvents,
            ModeArg::Averaged => Self::Averaged,
            ModeArg::Truncated => Self::Truncated,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum HypothesesArg {
    Strict,
    ProofStructure,
}

#[derive(Args)]
struct TheoremArgs {
    #[arg(long)]
    a: usize,
    #[arg(long)]
    n: u64,
    #[arg(long)]
    lambda: f64,
    #[arg(long = "T")]
    horizon: f64,
    #[arg(long)]
    beta: f64,
}

#[derive(Subcommand)]
enum BoundCmd {
    /// 2 exp(-t^2 / (2 m c^2))
    Azuma {
        #[arg(long)]
        m: u64,
        #[arg(long)]
        c: f64,
        #[arg(long)]
        t: f64,
    },
    /// 2a exp(-n lambda^2 / (8 T beta^2))
    Theorem(TheoremArgs),
    /// 2a exp(-min{n lambda^2 / (4 T beta b), n lambda / (4 beta)})
    Freedman {
        #[command(flatten)]
        base: TheoremArgs,
        #[arg(long)]
        b: f64,
    },
    /// 2 exp(-(lambda n)^2 / (2 T n beta b + 2 beta lambda n))
    FreedmanTwoTerm {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        lambda: f64,
        #[arg(long = "T")]
        horizon: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        b: f64,
    },
    /// Theorem bound plus a Pr(Bin(floor(T n), gamma) >= floor(x + 1))
    Truncated {
        #[command(flatten)]
        base: TheoremArgs,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        x: f64,
    },
    /// Pr(Bin(m, gamma) >= k)
    BinomialTail {
        #[arg(long)]
        m: u64,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        k: u64,
    },
    /// Closed-form bound on Pr(Bin(floor(tn), gamma) >= floor(x + 1))
    RemarkTail {
        #[arg(long)]
        tn: f64,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        x: f64,
    },
    /// (c + b min{m, 1/a}) e^{a m}
    GronwallDiscrete {
        #[arg(long)]
        c: f64,
        #[arg(long)]
        b: f64,
        #[arg(long)]
        a: f64,
        #[arg(long)]
        m: u64,
    },
    /// c e^{L t}
    GronwallContinuous {
        #[arg(long)]
        c: f64,
        #[arg(long = "L")]
        lipschitz: f64,
        #[arg(long)]
        t: f64,
    },
    /// (lambda + delta min{T, 1/L}) e^{L T}
    Stability {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long = "L")]
        lipschitz: f64,
        #[arg(long = "T")]
        horizon: f64,
    },
}

enum Failure {
    Verification,
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::Usage(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Solve { spec, out, lipschitz_samples } => solve(&spec, out.as_deref(), lipschitz_samples),
        Command::Simulate { spec, count, seed, out, full, jobs } => {
            let spec = ProcessSpec::load(&spec)?;
            let plugin = AnyProcess::from_spec(&spec)?;
            with_jobs(jobs, || simulate(&plugin, &spec, count, seed, &out, full))
        }
        Command::Verify { spec, count, seed, mode, hypotheses, anchor, report, summary_only, jobs } => {
            let spec = ProcessSpec::load(&spec)?;
            let plugin = AnyProcess::from_spec(&spec)?;
            let anchor = anchor.iter().map(|a| parse_anchor(a)).collect::<Result<Vec<_>, _>>()?;
            let options = VerifyOptions {
                mode: mode.into(),
                count,
                seed,
                hypothesis_mode: match hypotheses {
                    HypothesesArg::Strict => HypothesisMode::Strict,
                    HypothesesArg::ProofStructure => HypothesisMode::ProofStructure,
                },
                per_trajectory: !summary_only,
            };
            with_jobs(jobs, || verify(&plugin, &spec, &anchor, &options, report.as_deref()))
        }
        Command::Bounds { bound } => {
            println!("{}", sig12(evaluate(bound)?));
            Ok(())
        }
    }
}

fn with_jobs(jobs: Option<usize>, f: impl FnOnce() -> Result<(), Failure> + Send) -> Result<(), Failure> {
    match jobs {
        None => f(),
        Some(0) => Err(Failure::Usage("--jobs must be at least 1".into())),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            pool.install(f)
        }
    }
}

fn parse_anchor(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| Failure::Usage(format!("anchor {text:?}: {e}"))))
        .collect()
}

fn solve(path: &Path, out: Option<&Path>, samples: usize) -> Result<(), Failure> {
    let spec = ProcessSpec::load(path)?;
    let (r, horizon) = compute_rt(&spec)?;
    let adm = check_lambda_admissible(&spec, r, horizon, spec.truncation());
    let sol = solve_ode(&spec, r, horizon)?;
    let c = sol.constants;
    let summary = format!(
        "R = {}\nT = {}\nsigma = {}\nmargin = {}\nadmissible = {}\n{}",
        sig12(c.r),
        sig12(c.horizon),
        sig12(c.sigma),
        sig12(c.margin),
        adm.admissible,
        adm.inequality
    );
    let estimate = estimate_lipschitz_lower_bound(&spec, samples, 0)?;
    if estimate > spec.lipschitz * (1.0 + 1e-9) {
        eprintln!(
            "warning: drift varies at rate {} somewhere in D, above the declared L = {}",
            sig12(estimate),
            sig12(spec.lipschitz)
        );
    }
    match out {
        Some(p) => {
            sol.write_csv(BufWriter::new(File::create(p)?))?;
            println!("{summary}");
        }
        None => {
            eprintln!("{summary}");
            sol.write_csv(io::stdout().lock())?;
        }
    }
    Ok(())
}

fn simulate(plugin: &AnyProcess, spec: &ProcessSpec, count: usize, seed: u64, out: &Path, full: bool) -> Result<(), Failure> {
    fs::create_dir_all(out)?;
    let mut options = SimOptions::new(spec);
    if full {
        options = options.full();
    }
    let ensemble = run_ensemble(plugin, spec, count, seed, &options)?;
    let width = (count.max(2) - 1).to_string().len();
    let n = spec.n_f64();
    println!("trajectory,seed,stop_index,exited_domain,{}", (1..=spec.a).map(|k| format!("y_{k}")).collect::<Vec<_>>().join(","));
    for (j, tr) in ensemble.trajectories.iter().enumerate() {
        let file = out.join(format!("trajectory_{j:0width$}.csv"));
        tr.write_csv(BufWriter::new(File::create(&file)?))?;
        if let Some(f) = &tr.failure {
            eprintln!("warning: trajectory {j} stopped at step {}: {}", f.index, f.message);
        }
        let ys: Vec<String> = tr.final_counts().iter().map(|&y| sig12(y as f64 / n)).collect();
        println!("{j},{},{},{},{}", tr.seed, tr.stop_index, tr.exited_domain, ys.join(","));
    }
    Ok(())
}

fn verify(
    plugin: &AnyProcess,
    spec: &ProcessSpec,
    anchors: &[Vec<f64>],
    options: &VerifyOptions,
    report: Option<&Path>,
) -> Result<(), Failure> {
    let (json, within) = if anchors.is_empty() {
        let r = verify_with(plugin, spec, options)?;
        println!("{r}");
        if r.status == Status::HypothesesFailed {
            eprintln!("warning: hypotheses violated on {} steps", r.hypothesis_violations);
        }
        (serde_json::to_string_pretty(&r).map_err(Error::from)?, r.within_bound)
    } else {
        let mut all = vec![spec.y_hat.clone()];
        all.extend(anchors.iter().cloned());
        let r = verify_multi_anchor(plugin, spec, &all, options)?;
        for (y, a) in all.iter().zip(&r.anchors) {
            let y: Vec<String> = y.iter().map(|v| sig12(*v)).collect();
            println!("anchor {}: sigma = {}, failures {}", y.join(","), sig12(a.constants.sigma), a.failure_count);
        }
        println!("joint failures {}/{}", r.joint_failure_count, r.count);
        println!("probability {}", sig12(r.failure_probability.min(1.0)));
        (serde_json::to_string_pretty(&r).map_err(Error::from)?, r.within_bound)
    };
    if let Some(p) = report {
        let mut f = BufWriter::new(File::create(p)?);
        f.write_all(json.as_bytes())?;
        f.write_all(b"\n")?;
        f.flush()?;
    }
    if within {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn evaluate(bound: BoundCmd) -> Result<f64, Error> {
    Ok(match bound {
        BoundCmd::Azuma { m, c, t } => azuma_bound(m, c, t)?,
        BoundCmd::Theorem(p) => theorem_failure_probability(p.a, p.n, p.lambda, p.horizon, p.beta),
        BoundCmd::Freedman { base: p, b } => freedman_failure_probability(p.a, p.n, p.lambda, p.horizon, p.beta, b),
        BoundCmd::FreedmanTwoTerm { n, lambda, horizon, beta, b } => freedman_two_term_bound(n, lambda, horizon, beta, b),
        BoundCmd::Truncated { base: p, gamma, x } => {
            truncated_failure_probability(p.a, p.n, p.lambda, p.horizon, p.beta, gamma, x)?
        }
        BoundCmd::BinomialTail { m, gamma, k } => binomial_tail(m, gamma, k)?,
        BoundCmd::RemarkTail { tn, gamma, x } => truncation_tail_remark_bound(tn, gamma, x)?,
        BoundCmd::GronwallDiscrete { c, b, a, m } => gronwall_discrete_bound(GronwallDiscreteParams { c, b, a, m })?,
        BoundCmd::GronwallContinuous { c, lipschitz, t } => gronwall_continuous_bound(c, lipschitz, t)?,
        BoundCmd::Stability { lambda, delta, lipschitz, horizon } => stability_bound(lambda, delta, lipschitz, horizon),
    })
}
