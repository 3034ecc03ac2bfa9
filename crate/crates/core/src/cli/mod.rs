//! The `dnflow` commands.
//!
//! Each command reads a [`RunConfig`], writes its report to the given sink
//! and returns the process exit code; errors map to codes through
//! [`exit_code`].

pub mod config;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::diagnostics::{self, dual_quotient, gradient_error, monotonicity_checks, Check};
use crate::domain::{integrate_power, Domain, Field};
use crate::error::{Error, Result};
use crate::flow::{auto_tau, evolve, evolve_until_stable, read_snapshot, write_snapshot, Profile};
use crate::oracle::{minimize_rayleigh, EigenResult};
use crate::sampling::{random_field, zero_mean_random_field};

pub use config::{parse_config, parse_config_with, DomainSpec, InitKind, RunConfig, TauSpec};

/// Exit codes: 1 configuration, 2 solver, 3 invariant violation, 4 I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. }
        | Error::Parse(_)
        | Error::InvalidParameter(_)
        | Error::InvalidResolution(_)
        | Error::EmptyDomain(_)
        | Error::UnsupportedRegime(_)
        | Error::Shape { .. }
        | Error::Compatibility(_) => 1,
        Error::NonConvergence { .. } | Error::Step { .. } | Error::Degenerate(_) | Error::Budget(_) => 2,
        Error::SignViolation { .. } | Error::Range(_) => 3,
        Error::Io(_) | Error::Csv(_) => 4,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Evolve,
    Eigen,
    Oracle,
    Verify,
    Sweep,
}

/// Command-line options shared by all commands.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub param: Option<String>,
    pub values: Vec<String>,
    pub jobs: Option<usize>,
}

/// A parsed configuration with its domain built.
pub struct Run {
    pub config: RunConfig,
    pub domain: Domain,
    base: PathBuf,
}

impl Run {
    /// Relative paths in `text` resolve against `base`.
    pub fn from_text(text: &str, base: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let config = parse_config_with(text, overrides)?;
        let domain = config.domain.build(base)?;
        config.regime.check_domain(&domain)?;
        Ok(Self {
            config,
            domain,
            base: base.to_path_buf(),
        })
    }

    fn oracle(&self) -> Result<EigenResult> {
        let c = &self.config;
        minimize_rayleigh(&self.domain, c.params()?, c.regime, &c.solver(), c.seed)
    }

    /// The initial datum selected by `init.kind`.
    pub fn initial(&self) -> Result<Field> {
        let n = self.domain.len();
        match &self.config.init {
            InitKind::ConstantOne => Ok(vec![1.0; n]),
            InitKind::Random => Ok(random_field(n, self.config.seed)),
            InitKind::Extremal => Ok(self.oracle()?.extremal),
            InitKind::File(path) => {
                let file = File::open(self.base.join(path))?;
                let g = read_snapshot(BufReader::new(file))?;
                self.domain.check_field(&g)?;
                Ok(g)
            }
        }
    }

    fn tau(&self, g: &[f64]) -> Result<f64> {
        let c = &self.config;
        match c.tau {
            TauSpec::Fixed(t) => Ok(t),
            TauSpec::Auto => auto_tau(&self.domain, g, c.params()?, c.regime, &c.solver(), &c.eigen_options()),
        }
    }
}

/// Result of the `eigen` command.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenReport {
    pub lambda: f64,
    pub mu: f64,
    /// `L^p` distance between the final rescaled profile and the oracle extremal.
    pub profile_gap: f64,
    pub steps: usize,
    pub tau: f64,
}

/// `|a - b|_p`, minimized over the sign of `b` when the regime allows both.
fn profile_distance(d: &Domain, a: &[f64], b: &[f64], p: f64, either_sign: bool) -> Result<f64> {
    let dist = |s: f64| -> Result<f64> {
        let diff: Field = a.iter().zip(b).map(|(x, y)| x - s * y).collect();
        Ok(integrate_power(d, &diff, p)?.powf(1.0 / p))
    };
    let plus = dist(1.0)?;
    Ok(if either_sign { plus.min(dist(-1.0)?) } else { plus })
}

pub fn eigen_report(run: &Run) -> Result<EigenReport> {
    let c = &run.config;
    let params = c.params()?;
    let solver = c.solver();
    let g = run.initial()?;
    let out = evolve_until_stable(&run.domain, &g, params, c.regime, &solver, &c.eigen_options())?;
    let profile = match &out.profile {
        Profile::Normalized(f) => f.clone(),
        Profile::Vanished => {
            return Err(Error::Degenerate(
                "the flow vanished before the decay rate settled".into(),
            ))
        }
    };
    if !out.converged {
        return Err(Error::Budget(format!(
            "decay estimate still moving after {} steps",
            out.trajectory.steps()
        )));
    }
    let mu = dual_quotient(&run.domain, &profile, params, c.regime, &solver)?;
    let oracle = run.oracle()?;
    let gap = profile_distance(&run.domain, &profile, &oracle.extremal, c.p, c.regime.is_neumann())?;
    Ok(EigenReport {
        lambda: out.lambda,
        mu,
        profile_gap: gap,
        steps: out.trajectory.steps(),
        tau: out.trajectory.tau,
    })
}

fn out_dir(run: &Run, inv: &Invocation) -> Result<PathBuf> {
    let dir = inv.out.clone().unwrap_or_else(|| run.config.out_dir.clone());
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn evolve_command(run: &Run, inv: &Invocation, report: &mut dyn Write) -> Result<i32> {
    let c = &run.config;
    if let Some(&k) = c.snapshots.iter().find(|&&k| k > c.steps) {
        return Err(Error::Config {
            line: 0,
            key: "snapshots".into(),
            message: format!("step {k} beyond steps = {}", c.steps),
        });
    }
    let params = c.params()?;
    let solver = c.solver();
    let g = run.initial()?;
    let tau = run.tau(&g)?;
    let mut traj = evolve(&run.domain, &g, tau, c.steps, params, c.regime, &solver)?;
    diagnostics::fill_dual_quotients(&mut traj, &solver, true)?;

    let dir = out_dir(run, inv)?;
    let csv_path = dir.join("diagnostics.csv");
    diagnostics::write_csv(BufWriter::new(File::create(&csv_path)?), &traj.diagnostics)?;
    for &k in &c.snapshots {
        let path = dir.join(format!("snapshot_{k:06}.txt"));
        let mut out = BufWriter::new(File::create(path)?);
        write_snapshot(&mut out, &run.domain, &traj.states[k], c.p, c.regime, k, tau)?;
        out.flush()?;
    }
    let last = traj.diagnostics.last().expect("at least one row");
    writeln!(
        report,
        "steps {} tau {} lambda_decay {} mu_from_dual {}",
        traj.steps(),
        tau,
        last.lambda_decay,
        last.mu_from_dual
    )?;
    writeln!(report, "wrote {}", csv_path.display())?;
    Ok(0)
}

fn eigen_command(run: &Run, report: &mut dyn Write) -> Result<i32> {
    let r = eigen_report(run)?;
    writeln!(report, "{} {} {:e}", r.lambda, r.mu, r.profile_gap)?;
    Ok(0)
}

fn oracle_command(run: &Run, report: &mut dyn Write) -> Result<i32> {
    writeln!(report, "{}", run.oracle()?.summary())?;
    Ok(0)
}

/// Number of random fields behind the sampled checks of `verify`.
const VERIFY_SAMPLES: usize = 20;

/// The invariant suite for the configured regime.
pub fn verify_checks(run: &Run) -> Result<Vec<Check>> {
    let c = &run.config;
    let d = &run.domain;
    let params = c.params()?;
    let solver = c.solver();
    let oracle = run.oracle()?;

    let g = run.initial()?;
    let tau = run.tau(&g)?;
    let traj = evolve(d, &g, tau, c.steps, params, c.regime, &solver)?;
    let mut checks = monotonicity_checks(&traj, oracle.lambda, c.grad_tol)?;

    // the time stepper's defect, relative to its starting gradient
    let worst_solve = traj.solves.iter().map(|s| s.residual).fold(0.0, f64::max);
    checks.push(Check::new("step solves", worst_solve, c.grad_tol));
    checks.push(Check::new("oracle residual", oracle.residual, 10.0 * c.grad_tol));

    checks.extend(diagnostics::dual_poincare_checks(
        d,
        params,
        c.regime,
        &solver,
        &oracle.extremal,
        oracle.mu,
        VERIFY_SAMPLES,
        c.seed,
    )?);

    let mut grad = 0.0f64;
    for i in 0..3 {
        let u = if c.regime.is_neumann() {
            zero_mean_random_field(d.len(), c.seed + i)
        } else {
            random_field(d.len(), c.seed + i)
        };
        grad = grad.max(gradient_error(d, &u, params, c.regime)?);
    }
    checks.push(Check::new("energy gradient", grad, 1e-6));
    Ok(checks)
}

fn verify_command(run: &Run, report: &mut dyn Write) -> Result<i32> {
    let checks = verify_checks(run)?;
    writeln!(
        report,
        "{:<22} {:<6} {:>12} {:>12}",
        "invariant", "status", "worst", "bound"
    )?;
    for ch in &checks {
        let status = if ch.passed { "pass" } else { "fail" };
        writeln!(
            report,
            "{:<22} {:<6} {:>12.3e} {:>12.3e}",
            ch.name, status, ch.worst, ch.bound
        )?;
    }
    Ok(if checks.iter().all(|c| c.passed) { 0 } else { 3 })
}

fn sweep_command(text: &str, base: &Path, inv: &Invocation, report: &mut dyn Write) -> Result<i32> {
    let key = inv.param.clone().ok_or_else(|| Error::Config {
        line: 0,
        key: "--param".into(),
        message: "sweep needs --param and --values".into(),
    })?;
    if inv.values.is_empty() {
        return Err(Error::Config {
            line: 0,
            key: "--values".into(),
            message: "sweep needs at least one value".into(),
        });
    }
    for v in &inv.values {
        if v.parse::<f64>().is_err() {
            return Err(Error::Config {
                line: 0,
                key: key.clone(),
                message: format!("sweep value `{v}` is not a number"),
            });
        }
    }
    // every value must yield a valid configuration before anything runs
    let runs = inv
        .values
        .iter()
        .map(|v| Run::from_text(text, base, &[(key.clone(), v.clone())]))
        .collect::<Result<Vec<_>>>()?;
    let dir = out_dir(&runs[0], inv)?;

    let jobs = inv
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let results: Vec<Result<EigenReport>> = pool.install(|| runs.par_iter().map(eigen_report).collect());

    let path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&path)?));
    w.write_record([
        "param",
        "value",
        "lambda",
        "mu",
        "profile_gap",
        "steps",
        "tau",
        "status",
    ])?;
    let mut first_error = None;
    for (value, res) in inv.values.iter().zip(&results) {
        match res {
            Ok(r) => w.write_record([
                key.clone(),
                value.clone(),
                format!("{:e}", r.lambda),
                format!("{:e}", r.mu),
                format!("{:e}", r.profile_gap),
                r.steps.to_string(),
                format!("{:e}", r.tau),
                "ok".to_string(),
            ])?,
            Err(e) => {
                let nan = "NaN".to_string();
                w.write_record([
                    key.clone(),
                    value.clone(),
                    nan.clone(),
                    nan.clone(),
                    nan.clone(),
                    nan.clone(),
                    nan,
                    e.to_string(),
                ])?;
                first_error.get_or_insert(exit_code(e));
            }
        }
    }
    w.flush()?;
    for (value, res) in inv.values.iter().zip(&results) {
        match res {
            Ok(r) => writeln!(report, "{key}={value}: {} {} {:e}", r.lambda, r.mu, r.profile_gap)?,
            Err(e) => writeln!(report, "{key}={value}: error: {e}")?,
        }
    }
    writeln!(report, "wrote {}", path.display())?;
    Ok(first_error.unwrap_or(0))
}

/// Runs `cmd` and returns the exit code it reports.
pub fn run(cmd: Command, inv: &Invocation, report: &mut dyn Write) -> Result<i32> {
    let text = fs::read_to_string(&inv.config)?;
    let base = inv.config.parent().map(Path::to_path_buf).unwrap_or_default();
    if cmd == Command::Sweep {
        return sweep_command(&text, &base, inv, report);
    }
    let run = Run::from_text(&text, &base, &[])?;
    match cmd {
        Command::Evolve => evolve_command(&run, inv, report),
        Command::Eigen => eigen_command(&run, report),
        Command::Oracle => oracle_command(&run, report),
        Command::Verify => verify_command(&run, report),
        Command::Sweep => unreachable!("handled above"),
    }
}
