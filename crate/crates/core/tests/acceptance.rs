//! Acceptance run: one line per criterion, then a non-zero exit status if
//! any criterion failed for a reason not listed in `KNOWN_FAILURES`.

use std::f64::consts::PI;
use std::time::Instant;

use rayon::prelude::*;

use dnflow::diagnostics::{
    dual_poincare_checks, dual_quotient, fill_dual_quotients, gradient_error, max_positive_increment,
    monotonicity_checks, mu_lambda_consistency, Check,
};
use dnflow::flow::{evolve, evolve_until_stable, EigenRunOptions, Profile};
use dnflow::oracle::{dense_linear_reference, minimize_rayleigh, EigenResult};
use dnflow::sampling::random_field;
use dnflow::{integrate_power, BoundaryRegime, Domain, EnergyParams, Field, Result, SolverConfig};

const EPSILON: f64 = 1e-6;

/// Criteria that cannot pass as stated, with the reason printed next to them.
const KNOWN_FAILURES: &[(usize, &str)] = &[(
    2,
    "the quoted 56.6 is twice the classical value 2*pi_3^3 = 28.289; the grid result is checked against 28.289",
)];

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: String) -> Self {
        Self { passed, detail }
    }
}

fn params(p: f64) -> EnergyParams {
    EnergyParams::new(p, EPSILON).unwrap()
}

fn ones(d: &Domain) -> Field {
    vec![1.0; d.len()]
}

/// `g(x) = x`, a datum with a single sign change after the mean shift.
fn ramp(d: &Domain) -> Field {
    d.sample(|x, _| x)
}

fn oracle(d: &Domain, p: f64, regime: BoundaryRegime, cfg: &SolverConfig) -> Result<EigenResult> {
    minimize_rayleigh(d, params(p), regime, cfg, 1)
}

fn lp_distance(d: &Domain, a: &[f64], b: &[f64], p: f64, either_sign: bool) -> Result<f64> {
    let dist = |s: f64| -> Result<f64> {
        let diff: Field = a.iter().zip(b).map(|(x, y)| x - s * y).collect();
        Ok(integrate_power(d, &diff, p)?.powf(1.0 / p))
    };
    let plus = dist(1.0)?;
    Ok(if either_sign { plus.min(dist(-1.0)?) } else { plus })
}

fn regimes() -> [BoundaryRegime; 4] {
    [
        BoundaryRegime::Dirichlet,
        BoundaryRegime::robin(1.0).unwrap(),
        BoundaryRegime::Neumann,
        BoundaryRegime::fractional(0.5).unwrap(),
    ]
}

fn datum(d: &Domain, regime: BoundaryRegime) -> Field {
    if regime.is_neumann() {
        ramp(d)
    } else {
        ones(d)
    }
}

fn failed_checks(checks: &[Check]) -> Vec<String> {
    checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} {:.2e}>{:.0e}", c.name, c.worst, c.bound))
        .collect()
}

fn linear_anchor() -> Result<Outcome> {
    let start = Instant::now();
    let d = Domain::interval(199)?;
    let cfg = SolverConfig::default();
    let run = evolve_until_stable(
        &d,
        &ones(&d),
        params(2.0),
        BoundaryRegime::Dirichlet,
        &cfg,
        &EigenRunOptions::default(),
    )?;
    let reference = dense_linear_reference(&d, BoundaryRegime::Dirichlet)?.lambda;
    let elapsed = start.elapsed().as_secs_f64();
    let vs_reference = (run.lambda - reference).abs() / reference;
    let vs_continuum = (run.lambda - PI * PI).abs() / (PI * PI);
    Ok(Outcome::new(
        run.converged && vs_reference <= 1e-6 && vs_continuum <= 1e-4 && elapsed <= 10.0,
        format!(
            "flow {:.10} dense {:.10} (rel {vs_reference:.1e}), pi^2 rel {vs_continuum:.1e}, {elapsed:.2}s",
            run.lambda, reference
        ),
    ))
}

fn nonlinear_anchor() -> Result<Outcome> {
    let start = Instant::now();
    let p = 3.0;
    let d = Domain::interval(399)?;
    let cfg = SolverConfig::default();
    let run = evolve_until_stable(
        &d,
        &ones(&d),
        params(p),
        BoundaryRegime::Dirichlet,
        &cfg,
        &EigenRunOptions::default(),
    )?;
    let reference = oracle(&d, p, BoundaryRegime::Dirichlet, &cfg)?.lambda;
    let elapsed = start.elapsed().as_secs_f64();
    let vs_oracle = (run.lambda - reference).abs() / reference;
    // pi_p = 2 pi / (p sin(pi/p)); on the unit interval lambda = (p - 1) pi_p^p
    let pi_p = 2.0 * PI / (p * (PI / p).sin());
    let classical = (p - 1.0) * pi_p.powf(p);
    let vs_classical = (run.lambda - classical).abs() / classical;
    let quoted = 56.6;
    let vs_quoted = (run.lambda - quoted).abs() / quoted;
    let computed_ok = run.converged && vs_oracle <= 5e-3 && vs_classical <= 1e-2 && elapsed <= 60.0;
    Ok(Outcome::new(
        computed_ok && vs_quoted <= 1e-2,
        format!(
            "flow {:.6} oracle {:.6} (rel {vs_oracle:.1e}), 2*pi_3^3 = {classical:.4} (rel {vs_classical:.1e}, {}), \
             quoted 56.6 (rel {vs_quoted:.2}), {elapsed:.2}s",
            run.lambda,
            reference,
            if computed_ok { "ok" } else { "FAILED" },
        ),
    ))
}

fn profile_limit() -> Result<Outcome> {
    let d = Domain::interval(199)?;
    let cfg = SolverConfig::default();
    let opts = EigenRunOptions::default();
    let mut cases: Vec<(BoundaryRegime, f64)> = Vec::new();
    for p in [1.5, 2.0, 3.0] {
        cases.push((BoundaryRegime::Dirichlet, p));
        cases.push((BoundaryRegime::robin(1.0)?, p));
        cases.push((BoundaryRegime::Neumann, p));
    }
    cases.push((BoundaryRegime::fractional(0.5)?, 2.0));

    let rows: Vec<Result<(String, bool)>> = cases
        .par_iter()
        .map(|&(regime, p)| {
            let phi = oracle(&d, p, regime, &cfg)?;
            let neumann = regime.is_neumann();
            if neumann {
                // the limit is only identified when extremals are unique up to scaling
                let other = minimize_rayleigh(&d, params(p), regime, &cfg, 2)?;
                let spread = lp_distance(&d, &phi.extremal, &other.extremal, p, true)?;
                if spread > 1e-6 {
                    return Ok((format!("{regime} p={p} gated ({spread:.1e})"), true));
                }
            }
            let run = evolve_until_stable(&d, &datum(&d, regime), params(p), regime, &cfg, &opts)?;
            let gap = match &run.profile {
                Profile::Normalized(f) => lp_distance(&d, f, &phi.extremal, p, neumann)?,
                Profile::Vanished => f64::INFINITY,
            };
            Ok((format!("{regime} p={p} {gap:.1e}"), run.converged && gap <= 1e-3))
        })
        .collect();

    // the hypothesis is rejected on the square, where the ground state is not simple
    let square = Domain::rectangle(12, 12, 1.0, 1.0)?;
    let a = minimize_rayleigh(&square, params(2.0), BoundaryRegime::Neumann, &cfg, 1)?;
    let b = minimize_rayleigh(&square, params(2.0), BoundaryRegime::Neumann, &cfg, 2)?;
    let square_spread = lp_distance(&square, &a.extremal, &b.extremal, 2.0, true)?;

    let mut passed = true;
    let mut parts = Vec::new();
    for row in rows {
        let (text, ok) = row?;
        passed &= ok;
        parts.push(text);
    }
    parts.push(format!("square neumann gated ({square_spread:.1e})"));
    passed &= square_spread > 1e-6;
    Ok(Outcome::new(passed, parts.join(", ")))
}

fn separation() -> Result<Outcome> {
    let d = Domain::interval(199)?;
    let cfg = SolverConfig::default().with_grad_tol(1e-10);
    let rows: Vec<Result<(f64, f64)>> = [1.5, 2.0, 3.0]
        .par_iter()
        .map(|&p| {
            let phi = oracle(&d, p, BoundaryRegime::Dirichlet, &cfg)?;
            let tau = 0.5 / phi.lambda;
            let traj = evolve(&d, &phi.extremal, tau, 100, params(p), BoundaryRegime::Dirichlet, &cfg)?;
            let mut worst = 0.0f64;
            for (k, u) in traj.states.iter().enumerate() {
                let c = (1.0 + phi.lambda * tau).powf(-(k as f64) / (p - 1.0));
                let scale = phi.extremal.iter().fold(0.0f64, |m, v| m.max(c * v.abs()));
                let dev = u
                    .iter()
                    .zip(&phi.extremal)
                    .fold(0.0f64, |m, (a, b)| m.max((a - c * b).abs()));
                worst = worst.max(dev / scale);
            }
            Ok((p, worst))
        })
        .collect();
    let mut passed = true;
    let mut parts = Vec::new();
    for row in rows {
        let (p, worst) = row?;
        passed &= worst <= 1e-6;
        parts.push(format!("p={p} {worst:.1e}"));
    }
    Ok(Outcome::new(
        passed,
        format!("max relative deviation: {}", parts.join(", ")),
    ))
}

fn monotonicity() -> Result<Outcome> {
    let d = Domain::interval(199)?;
    let cases: Vec<(BoundaryRegime, f64, f64)> = regimes()
        .into_iter()
        .flat_map(|r| [1.5, 2.0, 3.0].map(move |p| (r, p)))
        .flat_map(|(r, p)| [1e-9, 5e-10].map(move |tol| (r, p, tol)))
        .collect();
    let rows: Vec<Result<Vec<String>>> = cases
        .par_iter()
        .map(|&(regime, p, tol)| {
            let cfg = SolverConfig::default().with_grad_tol(tol);
            let phi = oracle(&d, p, regime, &cfg)?;
            let tau = 0.5 / phi.lambda;
            let traj = evolve(&d, &datum(&d, regime), tau, 200, params(p), regime, &cfg)?;
            let checks = monotonicity_checks(&traj, phi.lambda, tol)?;
            Ok(failed_checks(&checks)
                .into_iter()
                .map(|f| format!("{regime} p={p} tol={tol:e}: {f}"))
                .collect())
        })
        .collect();
    let mut failures = Vec::new();
    for row in rows {
        failures.extend(row?);
    }
    Ok(Outcome::new(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "{} trajectories of 200 steps, slack 10*grad_tol at grad_tol 1e-9 and 5e-10",
                cases.len()
            )
        } else {
            failures.join("; ")
        },
    ))
}

fn dual_poincare() -> Result<Outcome> {
    let d = Domain::interval(199)?;
    let cfg = SolverConfig::default();
    let cases: Vec<(BoundaryRegime, f64)> = regimes()
        .into_iter()
        .flat_map(|r| [1.5, 2.0, 3.0].map(move |p| (r, p)))
        .collect();
    let rows: Vec<Result<Vec<String>>> = cases
        .par_iter()
        .map(|&(regime, p)| {
            let phi = oracle(&d, p, regime, &cfg)?;
            let checks = dual_poincare_checks(&d, params(p), regime, &cfg, &phi.extremal, phi.mu, 200, 7)?;
            Ok(failed_checks(&checks)
                .into_iter()
                .map(|f| format!("{regime} p={p}: {f}"))
                .collect())
        })
        .collect();
    let mut failures = Vec::new();
    for row in rows {
        failures.extend(row?);
    }
    Ok(Outcome::new(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} regime/p pairs, 200 fields each", cases.len())
        } else {
            failures.join("; ")
        },
    ))
}

fn mu_lambda() -> Result<Outcome> {
    let d = Domain::interval(199)?;
    let cfg = SolverConfig::default();
    let cases: Vec<(BoundaryRegime, f64)> = [BoundaryRegime::Dirichlet, BoundaryRegime::robin(1.0)?]
        .into_iter()
        .flat_map(|r| [1.5, 2.0, 3.0].map(move |p| (r, p)))
        .collect();
    let rows: Vec<Result<(String, bool)>> = cases
        .par_iter()
        .map(|&(regime, p)| {
            let run = evolve_until_stable(&d, &ones(&d), params(p), regime, &cfg, &EigenRunOptions::default())?;
            let Profile::Normalized(profile) = &run.profile else {
                return Ok((format!("{regime} p={p} vanished"), false));
            };
            let mu = dual_quotient(&d, profile, params(p), regime, &cfg)?;
            let gap = mu_lambda_consistency(run.lambda, mu, p)?;
            Ok((format!("{regime} p={p} {gap:.1e}"), run.converged && gap <= 0.02))
        })
        .collect();
    let mut passed = true;
    let mut parts = Vec::new();
    for row in rows {
        let (text, ok) = row?;
        passed &= ok;
        parts.push(text);
    }
    Ok(Outcome::new(passed, parts.join(", ")))
}

fn refinement() -> Result<Outcome> {
    let d = Domain::interval(99)?;
    let cfg = SolverConfig::default();
    let noise = 10.0 * cfg.grad_tol;
    let cases: Vec<(BoundaryRegime, f64)> = regimes()
        .into_iter()
        .flat_map(|r| [1.5, 2.0, 3.0].map(move |p| (r, p)))
        .collect();
    let rows: Vec<Result<(String, bool, bool)>> = cases
        .par_iter()
        .map(|&(regime, p)| {
            let lambda = oracle(&d, p, regime, &cfg)?.lambda;
            let g = random_field(d.len(), 11);
            let base = 0.5 / lambda;
            let mut increments = Vec::new();
            for level in 0..3 {
                let steps = 20 << level;
                let tau = base / f64::from(1u32 << level);
                let mut traj = evolve(&d, &g, tau, steps, params(p), regime, &cfg)?;
                fill_dual_quotients(&mut traj, &cfg, true)?;
                let dual: Vec<f64> = traj.diagnostics.iter().map(|r| r.dual_q).collect();
                let rayleigh: Vec<f64> = traj.diagnostics.iter().map(|r| r.rayleigh).collect();
                increments.push((
                    max_positive_increment(&dual, noise),
                    max_positive_increment(&rayleigh, noise),
                ));
            }
            let shrinks = |a: f64, b: f64| b == 0.0 || a >= 1.5 * b;
            let ok = increments
                .windows(2)
                .all(|w| shrinks(w[0].0, w[1].0) && shrinks(w[0].1, w[1].1));
            let text = format!(
                "{regime} p={p} dual [{:.1e} {:.1e} {:.1e}] rayleigh [{:.1e} {:.1e} {:.1e}]",
                increments[0].0, increments[1].0, increments[2].0, increments[0].1, increments[1].1, increments[2].1
            );
            let moving = increments[0].0 > 0.0 || increments[0].1 > 0.0;
            Ok((text, ok, moving))
        })
        .collect();
    let mut passed = true;
    let mut shown = Vec::new();
    let mut moving = 0;
    for row in rows {
        let (text, ok, m) = row?;
        passed &= ok;
        if m {
            moving += 1;
        }
        if !ok {
            shown.push(text);
        }
    }
    Ok(Outcome::new(
        passed,
        if passed {
            format!(
                "{} regime/p pairs, three step sizes each; {moving} with increments above the noise floor at the coarsest step",
                cases.len()
            )
        } else {
            shown.join("; ")
        },
    ))
}

fn comparison() -> Result<Outcome> {
    let d = Domain::interval(199)?;
    let cfg = SolverConfig::default();
    let rows: Vec<Result<(f64, f64, f64)>> = [2.0, 3.0]
        .par_iter()
        .map(|&p| {
            let phi = oracle(&d, p, BoundaryRegime::Dirichlet, &cfg)?;
            let peak = phi.extremal.iter().fold(0.0f64, |m, v| m.max(*v));
            let scale = 1.0 / peak;
            let tau = 0.5 / phi.lambda;
            let traj = evolve(&d, &ones(&d), tau, 200, params(p), BoundaryRegime::Dirichlet, &cfg)?;
            let mut worst = f64::INFINITY;
            let mut relative = f64::INFINITY;
            for (k, u) in traj.states.iter().enumerate() {
                let c = (1.0 + phi.lambda * tau).powf(-(k as f64) / (p - 1.0)) * scale;
                for (a, b) in u.iter().zip(&phi.extremal) {
                    worst = worst.min(a - c * b);
                    relative = relative.min((a - c * b) / (c * peak));
                }
            }
            Ok((p, worst, relative))
        })
        .collect();
    let floor = -10.0 * cfg.grad_tol;
    let mut passed = true;
    let mut parts = Vec::new();
    for row in rows {
        let (p, worst, relative) = row?;
        passed &= worst >= floor;
        parts.push(format!(
            "p={p} min margin {worst:.1e} (relative to the bound's peak {relative:.1e})"
        ));
    }
    Ok(Outcome::new(passed, parts.join(", ")))
}

fn gradients() -> Result<Outcome> {
    let line = Domain::interval(64)?;
    let plane = Domain::rectangle(9, 7, 1.0, 0.8)?;
    let mut cases: Vec<(&Domain, BoundaryRegime, f64)> = Vec::new();
    for p in [1.5, 2.0, 2.5, 3.0] {
        for regime in regimes() {
            cases.push((&line, regime, p));
            if !matches!(regime, BoundaryRegime::FractionalDirichlet { .. }) {
                cases.push((&plane, regime, p));
            }
        }
    }
    let rows: Vec<Result<f64>> = cases
        .par_iter()
        .map(|&(d, regime, p)| {
            let mut worst = 0.0f64;
            for seed in 0..50 {
                let u = random_field(d.len(), 1000 + seed);
                worst = worst.max(gradient_error(d, &u, params(p), regime)?);
            }
            Ok(worst)
        })
        .collect();
    let mut worst = 0.0f64;
    for row in rows {
        worst = worst.max(row?);
    }
    Ok(Outcome::new(
        worst <= 1e-6,
        format!(
            "{} regime/domain/p cases, 50 fields each, worst relative error {worst:.1e}",
            cases.len()
        ),
    ))
}

type Criterion = (usize, &'static str, fn() -> Result<Outcome>);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "linear eigenvalue anchor", linear_anchor),
        (2, "nonlinear eigenvalue anchor", nonlinear_anchor),
        (3, "profile limit", profile_limit),
        (4, "separated solutions", separation),
        (5, "monotonicity suite", monotonicity),
        (6, "dual Poincare suite", dual_poincare),
        (7, "mu-lambda consistency", mu_lambda),
        (8, "quotient refinement", refinement),
        (9, "comparison bound", comparison),
        (10, "gradient correctness", gradients),
    ];
    let start = Instant::now();
    let outcomes: Vec<Outcome> = criteria
        .par_iter()
        .map(|(_, _, run)| run().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}"))))
        .collect();

    let mut unexpected = 0;
    for ((id, name, _), outcome) in criteria.iter().zip(&outcomes) {
        let status = if outcome.passed { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {status} {name}: {}", outcome.detail);
        if !outcome.passed {
            match KNOWN_FAILURES.iter().find(|(k, _)| k == id) {
                Some((_, why)) => println!("             known: {why}"),
                None => unexpected += 1,
            }
        }
    }
    println!("acceptance finished in {:.1}s", start.elapsed().as_secs_f64());
    if unexpected > 0 {
        println!("{unexpected} unexpected failure(s)");
        std::process::exit(1);
    }
}
