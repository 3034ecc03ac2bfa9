//! Monotone quantities and estimators along a trajectory.
//!
//! Norms of decaying states are formed after dividing by `max|u|`, and
//! sequence checks work with ratios, so nothing underflows even when a
//! trajectory spans hundreds of orders of magnitude.

use std::io::Write;

use crate::domain::{Domain, Field};
use crate::elliptic::{InverseSolver, SolverConfig};
use crate::error::{Error, Result};
use crate::flow::FlowTrajectory;
use crate::operators::{jp, BoundaryRegime, EnergyOperator, EnergyParams};

pub const CSV_HEADER: [&str; 10] = [
    "k",
    "t",
    "Np",
    "rayleigh",
    "dual_q",
    "lambda_decay",
    "lambda_rayleigh",
    "mu_from_dual",
    "conservation",
    "energy_residual",
];

/// One row per state. Quantities that are undefined for a row (the decay
/// estimate at `k = 0`, dual quotients before [`fill_dual_quotients`]) are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRow {
    pub k: usize,
    pub t: f64,
    /// `int |u^k|^p`.
    pub np: f64,
    /// `p E(u^k) / Np`.
    pub rayleigh: f64,
    /// `int |u^k|^p / |Jp(u^k)|_*^q`.
    pub dual_q: f64,
    pub lambda_decay: f64,
    pub lambda_rayleigh: f64,
    pub mu_from_dual: f64,
    /// `int Jp(u^k)`.
    pub conservation: f64,
    pub energy_residual: f64,
}

/// `max|u|` and `sum |u/max|u||^p`, so that `int |u|^p = w s^p sum`.
fn scaled_power(u: &[f64], p: f64) -> (f64, f64) {
    let s = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(s >= f64::MIN_POSITIVE) {
        return (0.0, 0.0);
    }
    (s, u.iter().map(|v| (v / s).abs().powf(p)).sum())
}

fn scaled(u: &[f64], s: f64) -> Field {
    u.iter().map(|v| v / s).collect()
}

/// `N(prev) / N(u)` computed without forming either power.
fn decay_ratio(prev: (f64, f64), cur: (f64, f64), p: f64) -> Option<f64> {
    if prev.0 == 0.0 || cur.0 == 0.0 {
        return None;
    }
    Some((prev.0 / cur.0).powf(p) * prev.1 / cur.1)
}

pub(crate) fn basic_row(exact: &EnergyOperator, tau: f64, k: usize, u: &[f64], prev: Option<&Field>) -> DiagnosticsRow {
    let d = exact.domain();
    let p = exact.params().p();
    let w = d.volume_weight();
    let cur = scaled_power(u, p);
    let np = w * cur.0.powf(p) * cur.1;
    let rayleigh = if cur.0 > 0.0 {
        p * exact.energy(&scaled(u, cur.0)) / (w * cur.1)
    } else {
        f64::NAN
    };
    let conservation = w * u.iter().map(|&v| jp(v, p)).sum::<f64>();
    let (lambda_decay, energy_residual) = match prev {
        Some(prev) => {
            let before = scaled_power(prev, p);
            let lam = decay_ratio(before, cur, p).map_or(f64::NAN, |r| (r.powf((p - 1.0) / p) - 1.0) / tau);
            let np_prev = w * before.0.powf(p) * before.1;
            let res = (np - np_prev) / p + tau / (p - 1.0) * p * exact.energy(u);
            (lam, res)
        }
        None => (f64::NAN, 0.0),
    };
    DiagnosticsRow {
        k,
        t: k as f64 * tau,
        np,
        rayleigh,
        dual_q: f64::NAN,
        lambda_decay,
        lambda_rayleigh: rayleigh,
        mu_from_dual: f64::NAN,
        conservation,
        energy_residual,
    }
}

fn exact_operator(traj: &FlowTrajectory) -> Result<EnergyOperator<'_>> {
    EnergyOperator::new(&traj.domain, EnergyParams::exact(traj.params.p())?, traj.regime)
}

fn step_index(traj: &FlowTrajectory, k: usize) -> Result<()> {
    if k == 0 || k > traj.steps() {
        return Err(Error::Range(format!("step {k} outside 1..={}", traj.steps())));
    }
    Ok(())
}

/// `((N(k-1)/N(k))^((p-1)/p) - 1) / tau`; exact on separated solutions.
pub fn lambda_decay_estimate(traj: &FlowTrajectory, k: usize) -> Result<f64> {
    step_index(traj, k)?;
    let p = traj.params.p();
    let ratio = decay_ratio(
        scaled_power(&traj.states[k - 1], p),
        scaled_power(&traj.states[k], p),
        p,
    )
    .ok_or_else(|| Error::Degenerate(format!("state {} or {k} has vanished", k - 1)))?;
    Ok((ratio.powf((p - 1.0) / p) - 1.0) / traj.tau)
}

/// `(N(k) - N(k-1))/p + tau/(p-1) * p E(u^k)`; nonpositive up to solver slack.
pub fn energy_identity_residual(traj: &FlowTrajectory, k: usize) -> Result<f64> {
    step_index(traj, k)?;
    let op = exact_operator(traj)?;
    Ok(basic_row(&op, traj.tau, k, &traj.states[k], Some(&traj.states[k - 1])).energy_residual)
}

/// `|mu - lambda^(1/(p-1))| / lambda^(1/(p-1))`.
pub fn mu_lambda_consistency(lambda: f64, mu: f64, p: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!("p must exceed 1, got {p}")));
    }
    let m = lambda.powf(1.0 / (p - 1.0));
    Ok((mu - m).abs() / m)
}

/// Dual norms `|f|_*^q = <f, A^{-1} f>` through repeated inverse solves.
pub struct DualNorm<'d> {
    solver: InverseSolver<'d>,
    domain: &'d Domain,
    p: f64,
}

impl<'d> DualNorm<'d> {
    pub fn new(d: &'d Domain, params: EnergyParams, regime: BoundaryRegime, cfg: &SolverConfig) -> Result<Self> {
        Ok(Self {
            solver: InverseSolver::new(d, params, regime, *cfg)?,
            domain: d,
            p: params.p(),
        })
    }

    /// `<f, A^{-1} g>` and the solve `A^{-1} g`.
    pub fn pairing(&self, f: &[f64], g: &[f64], warm: Option<&[f64]>) -> Result<(f64, Field)> {
        self.domain.check_field(f)?;
        let (u, _) = self.solver.solve(g, warm)?;
        let w = self.domain.volume_weight();
        Ok((w * f.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>(), u))
    }

    pub fn norm_q(&self, f: &[f64]) -> Result<f64> {
        Ok(self.pairing(f, f, None)?.0)
    }

    pub fn norm(&self, f: &[f64]) -> Result<f64> {
        let q = self.p / (self.p - 1.0);
        Ok(self.norm_q(f)?.max(0.0).powf(1.0 / q))
    }

    /// `int |u|^p / |Jp(u)|_*^q` with the solve of the max-normalized field,
    /// which may serve as the warm start for a nearby field.
    pub fn quotient(&self, u: &[f64], warm: Option<&[f64]>) -> Result<(f64, Field)> {
        self.domain.check_field(u)?;
        let (s, sum) = scaled_power(u, self.p);
        if s == 0.0 {
            return Err(Error::Degenerate("dual quotient of a vanishing field".into()));
        }
        let v = scaled(u, s);
        let f: Field = v.iter().map(|&z| jp(z, self.p)).collect();
        let (dq, sol) = self.pairing(&f, &f, warm)?;
        Ok((self.domain.volume_weight() * sum / dq, sol))
    }
}

/// `<f, A^{-1} f>`, which equals `p E(A^{-1} f)`.
pub fn dual_norm_q(
    d: &Domain,
    f: &[f64],
    params: EnergyParams,
    regime: BoundaryRegime,
    cfg: &SolverConfig,
) -> Result<f64> {
    DualNorm::new(d, params, regime, cfg)?.norm_q(f)
}

/// `(<f, A^{-1} f>)^(1/q)`.
pub fn dual_norm(
    d: &Domain,
    f: &[f64],
    params: EnergyParams,
    regime: BoundaryRegime,
    cfg: &SolverConfig,
) -> Result<f64> {
    DualNorm::new(d, params, regime, cfg)?.norm(f)
}

/// `int |u|^p / |Jp(u)|_*^q`; zero-homogeneous, equal to `mu` at extremals.
pub fn dual_quotient(
    d: &Domain,
    u: &[f64],
    params: EnergyParams,
    regime: BoundaryRegime,
    cfg: &SolverConfig,
) -> Result<f64> {
    Ok(DualNorm::new(d, params, regime, cfg)?.quotient(u, None)?.0)
}

/// Fills `dual_q` and `mu_from_dual` for every nonvanishing state. With
/// `warm`, each inverse solve starts from the previous one.
pub fn fill_dual_quotients(traj: &mut FlowTrajectory, cfg: &SolverConfig, warm: bool) -> Result<()> {
    let domain = traj.domain.clone();
    let dual = DualNorm::new(&domain, traj.params, traj.regime, cfg)?;
    let mut last: Option<Field> = None;
    for (state, row) in traj.states.iter().zip(traj.diagnostics.iter_mut()) {
        if scaled_power(state, traj.params.p()).0 == 0.0 {
            continue;
        }
        let start = if warm { last.as_deref() } else { None };
        let (dq, sol) = dual.quotient(state, start)?;
        row.dual_q = dq;
        row.mu_from_dual = dq;
        last = Some(sol);
    }
    Ok(())
}

/// Writes the rows as CSV with [`CSV_HEADER`].
pub fn write_csv<W: Write>(out: W, rows: &[DiagnosticsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        let vals = [
            r.t,
            r.np,
            r.rayleigh,
            r.dual_q,
            r.lambda_decay,
            r.lambda_rayleigh,
            r.mu_from_dual,
            r.conservation,
            r.energy_residual,
        ];
        let mut rec = vec![r.k.to_string()];
        rec.extend(vals.iter().map(|v| format!("{v:e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of one invariant check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Largest normalized violation seen (0 when the property held exactly).
    pub worst: f64,
    pub bound: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, worst: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            passed: worst <= bound,
            worst,
            bound,
        }
    }
}

/// Natural logarithms of `N(u)` and `E(u)` for every state (`-inf` for a
/// vanished state or zero energy).
fn log_series(traj: &FlowTrajectory) -> Result<(Vec<f64>, Vec<f64>)> {
    let op = exact_operator(traj)?;
    let p = traj.params.p();
    let w = traj.domain.volume_weight();
    let mut ln_n = Vec::with_capacity(traj.states.len());
    let mut ln_e = Vec::with_capacity(traj.states.len());
    for u in &traj.states {
        let (s, sum) = scaled_power(u, p);
        if s == 0.0 {
            ln_n.push(f64::NEG_INFINITY);
            ln_e.push(f64::NEG_INFINITY);
            continue;
        }
        let ls = p * s.ln();
        ln_n.push(ls + (w * sum).ln());
        ln_e.push(ls + op.energy(&scaled(u, s)).ln());
    }
    Ok((ln_n, ln_e))
}

/// The monotonicity suite along a trajectory, with relative slack
/// `10 grad_tol`. `lambda_h` is the same-grid ground-state value.
pub fn monotonicity_checks(traj: &FlowTrajectory, lambda_h: f64, grad_tol: f64) -> Result<Vec<Check>> {
    let (ln_n, ln_e) = log_series(traj)?;
    let p = traj.params.p();
    let q = p / (p - 1.0);
    let tau = traj.tau;
    let bound = 10.0 * grad_tol;
    let live = |k: usize| ln_n[k].is_finite();
    let ratio = |a: f64, b: f64| (a - b).exp();
    let k_max = traj.steps();

    let mut decay = 0.0f64;
    let mut scaled_decay = 0.0f64;
    let mut energy = 0.0f64;
    let mut identity = 0.0f64;
    let mut convex = 0.0f64;
    let mut bound_worst = 0.0f64;
    for k in 1..=k_max {
        if !(live(k) && live(k - 1)) {
            continue;
        }
        // N(k)/N(k-1)
        let r = ratio(ln_n[k], ln_n[k - 1]);
        decay = decay.max(r - 1.0);
        scaled_decay = scaled_decay.max((1.0 + q * tau * lambda_h) * r - 1.0);
        if ln_e[k - 1].is_finite() {
            energy = energy.max(ratio(ln_e[k], ln_e[k - 1]) - 1.0);
        }
        let e_over_n = ratio(ln_e[k], ln_n[k - 1]);
        identity = identity.max((r - 1.0) / p + tau / (p - 1.0) * p * e_over_n);
        if k < k_max && live(k + 1) {
            let r2 = ratio(ln_n[k + 1], ln_n[k - 1]);
            convex = convex.max(-(r2 - 2.0 * r + 1.0));
        }
        // q p E(k) <= N(k-m) / (m tau)
        for m in 1..=k {
            if live(k - m) && ln_e[k].is_finite() {
                let v = q * p * ratio(ln_e[k], ln_n[k - m]) * m as f64 * tau - 1.0;
                bound_worst = bound_worst.max(v);
            }
        }
    }

    let mut checks = vec![
        Check::new("Lp decay", decay, bound),
        Check::new("scaled decay", scaled_decay, bound),
        Check::new("energy monotone", energy, bound),
        Check::new("convexity trend", convex, bound),
        Check::new("decay bound", bound_worst, bound),
        Check::new("energy inequality", identity, bound),
    ];
    if traj.regime.is_neumann() {
        let mut worst = 0.0f64;
        for u in &traj.states {
            let total: f64 = u.iter().map(|&v| jp(v, p)).sum();
            let size: f64 = u.iter().map(|&v| jp(v, p).abs()).sum();
            if size > 0.0 {
                worst = worst.max(total.abs() / size);
            }
        }
        checks.push(Check::new("conservation", worst, bound));
    }
    Ok(checks)
}

/// Largest increment `v[k] - v[k-1]` that exceeds `noise * |v[k-1]|`
/// (zero if there is none). NaN entries are skipped.
pub fn max_positive_increment(values: &[f64], noise: f64) -> f64 {
    values
        .windows(2)
        .filter(|w| w[0].is_finite() && w[1].is_finite())
        .map(|w| w[1] - w[0])
        .zip(values.iter())
        .filter(|(inc, v0)| *inc > noise * v0.abs())
        .map(|(inc, _)| inc)
        .fold(0.0, f64::max)
}

/// Relative `l2` error between [`EnergyOperator::energy_and_gradient`] and
/// central differences of the energy at `u`.
pub fn gradient_error(d: &Domain, u: &[f64], params: EnergyParams, regime: BoundaryRegime) -> Result<f64> {
    d.check_field(u)?;
    let op = EnergyOperator::new(d, params, regime)?;
    let mut g = vec![0.0; u.len()];
    op.energy_and_gradient(u, &mut g);
    let mut x = u.to_vec();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..u.len() {
        let h = 1e-6 * u[i].abs().max(1.0);
        x[i] = u[i] + h;
        let plus = op.energy(&x);
        x[i] = u[i] - h;
        let minus = op.energy(&x);
        x[i] = u[i];
        let fd = (plus - minus) / (2.0 * h);
        num += (g[i] - fd).powi(2);
        den += fd * fd;
    }
    Ok((num / den.max(f64::MIN_POSITIVE)).sqrt())
}

/// Dual Poincare inequality and its equality case at `Jp(phi)`, plus the
/// Minkowski-type and triangle inequalities of the dual norm, on
/// `samples` pseudo-random fields (zero-mean, so every regime accepts them).
#[allow(clippy::too_many_arguments)]
pub fn dual_poincare_checks(
    d: &Domain,
    params: EnergyParams,
    regime: BoundaryRegime,
    cfg: &SolverConfig,
    phi: &[f64],
    mu: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<Check>> {
    d.check_field(phi)?;
    let p = params.p();
    let q = params.q();
    let w = d.volume_weight();
    let dual = DualNorm::new(d, params, regime, cfg)?;
    let lq = |f: &[f64]| -> f64 { w * f.iter().map(|v| v.abs().powf(q)).sum::<f64>() };
    let slack = 1e-6;
    let equality_bound = 10.0 * cfg.grad_tol;

    let f_phi: Field = phi.iter().map(|&z| jp(z, p)).collect();
    let equality_gap = (mu * dual.norm_q(&f_phi)? / lq(&f_phi) - 1.0).abs();

    let fields: Vec<Field> = (0..samples)
        .map(|i| crate::sampling::zero_mean_random_field(d.len(), seed.wrapping_add(i as u64)))
        .collect();
    let mut inequality = 0.0f64;
    let mut nearest = f64::INFINITY;
    let mut norms = Vec::with_capacity(samples);
    let mut solves = Vec::with_capacity(samples);
    for f in &fields {
        let (nq, u) = dual.pairing(f, f, None)?;
        let gap = 1.0 - mu * nq / lq(f);
        inequality = inequality.max(-gap);
        nearest = nearest.min(gap);
        norms.push(nq.max(0.0).powf(1.0 / q));
        solves.push(u);
    }
    let mut minkowski = 0.0f64;
    let mut triangle = 0.0f64;
    for i in 0..samples {
        let j = (i + 1) % samples;
        if i == j {
            continue;
        }
        let (f, g) = (&fields[i], &fields[j]);
        let pair = w * f.iter().zip(&solves[j]).map(|(a, b)| a * b).sum::<f64>();
        let cap = norms[i] * norms[j].powf(q - 1.0);
        if cap > 0.0 {
            minkowski = minkowski.max(pair / cap - 1.0);
        }
        let sum: Field = f.iter().zip(g).map(|(a, b)| a + b).collect();
        let joint = dual.norm(&sum)?;
        triangle = triangle.max(joint / (norms[i] + norms[j]) - 1.0);
    }
    // random fields should sit far from the equality case
    let separation = if nearest > 0.0 {
        10.0 * equality_bound / nearest
    } else {
        f64::INFINITY
    };
    Ok(vec![
        Check::new("dual poincare", inequality, slack),
        Check::new("dual equality", equality_gap, equality_bound),
        Check::new("equality separation", separation, 1.0),
        Check::new("dual minkowski", minkowski, slack),
        Check::new("dual triangle", triangle, slack),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::evolve;
    use crate::oracle::minimize_rayleigh;
    use crate::sampling::{random_field, zero_mean_random_field};
    use std::f64::consts::PI;

    #[test]
    fn sine_mode_dual_norm() {
        let d = Domain::interval(99).unwrap();
        let h = d.h();
        let lam = 4.0 / (h * h) * (0.5 * PI * h).sin().powi(2);
        let raw = d.sample(|x, _| (PI * x).sin());
        let l2 = (h * raw.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let f: Field = raw.iter().map(|v| v / l2).collect();
        let prm = EnergyParams::new(2.0, 0.0).unwrap();
        let cfg = SolverConfig::default().with_grad_tol(1e-12);
        let v = dual_norm_q(&d, &f, prm, BoundaryRegime::Dirichlet, &cfg).unwrap();
        assert!((v - 1.0 / lam).abs() < 1e-10 / lam, "{v} vs {}", 1.0 / lam);
        assert_eq!(
            dual_norm_q(&d, &vec![0.0; 99], prm, BoundaryRegime::Dirichlet, &cfg).unwrap(),
            0.0
        );
    }

    #[test]
    fn pairing_matches_energy() {
        let d = Domain::interval(50).unwrap();
        let cfg = SolverConfig::default();
        for p in [1.5, 2.0, 3.0] {
            let prm = EnergyParams::new(p, 1e-6).unwrap();
            for regime in [BoundaryRegime::Dirichlet, BoundaryRegime::Neumann] {
                let f = zero_mean_random_field(50, 4);
                let dual = DualNorm::new(&d, prm, regime, &cfg).unwrap();
                let (val, u) = dual.pairing(&f, &f, None).unwrap();
                let e = EnergyOperator::new(&d, EnergyParams::exact(p).unwrap(), regime)
                    .unwrap()
                    .energy(&u);
                assert!(
                    (val - p * e).abs() <= 10.0 * cfg.grad_tol * val,
                    "{regime} p={p}: {val} vs {}",
                    p * e
                );
            }
        }
    }

    #[test]
    fn dual_quotient_at_extremal_is_mu() {
        let d = Domain::interval(40).unwrap();
        let cfg = SolverConfig::default();
        for p in [1.5, 3.0] {
            let prm = EnergyParams::new(p, 1e-6).unwrap();
            let eig = minimize_rayleigh(&d, prm, BoundaryRegime::Dirichlet, &cfg, 5).unwrap();
            let dq = dual_quotient(&d, &eig.extremal, prm, BoundaryRegime::Dirichlet, &cfg).unwrap();
            assert!(
                (dq - eig.mu).abs() <= 10.0 * cfg.grad_tol * eig.mu,
                "p={p}: {dq} vs {}",
                eig.mu
            );
            let scaled: Field = eig.extremal.iter().map(|v| -3.0 * v).collect();
            let dq2 = dual_quotient(&d, &scaled, prm, BoundaryRegime::Dirichlet, &cfg).unwrap();
            assert!((dq2 - dq).abs() <= 1e-12 * dq);
            let r = random_field(40, 2);
            let dqr = dual_quotient(&d, &r, prm, BoundaryRegime::Dirichlet, &cfg).unwrap();
            assert!(dqr >= eig.mu * (1.0 - 1e-6));
        }
        assert!(matches!(
            dual_quotient(
                &d,
                &vec![0.0; 40],
                EnergyParams::new(2.0, 0.0).unwrap(),
                BoundaryRegime::Dirichlet,
                &cfg
            ),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn consistency_formula() {
        assert_eq!(mu_lambda_consistency(PI * PI, PI * PI, 2.0).unwrap(), 0.0);
        assert!(mu_lambda_consistency(8.0, 8f64.sqrt(), 3.0).unwrap() < 1e-15);
        assert!(mu_lambda_consistency(0.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn separated_trajectory_estimates() {
        let d = Domain::interval(30).unwrap();
        let cfg = SolverConfig::default();
        let p = 3.0;
        let prm = EnergyParams::new(p, 1e-6).unwrap();
        let eig = minimize_rayleigh(&d, prm, BoundaryRegime::Dirichlet, &cfg, 1).unwrap();
        let traj = evolve(&d, &eig.extremal, 0.01, 5, prm, BoundaryRegime::Dirichlet, &cfg).unwrap();
        for k in 1..=5 {
            let est = lambda_decay_estimate(&traj, k).unwrap();
            assert!((est - eig.lambda).abs() <= 10.0 * cfg.grad_tol * eig.lambda, "{est}");
            assert_eq!(est, traj.diagnostics[k].lambda_decay);
            let r = energy_identity_residual(&traj, k).unwrap();
            assert!(r <= 10.0 * cfg.grad_tol * traj.diagnostics[k - 1].np);
        }
        assert!(lambda_decay_estimate(&traj, 0).is_err());
    }

    #[test]
    fn zero_trajectory_signals() {
        let d = Domain::interval(10).unwrap();
        let prm = EnergyParams::new(2.0, 0.0).unwrap();
        let traj = evolve(
            &d,
            &[0.0; 10],
            0.1,
            2,
            prm,
            BoundaryRegime::Dirichlet,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(matches!(lambda_decay_estimate(&traj, 1), Err(Error::Degenerate(_))));
        assert_eq!(energy_identity_residual(&traj, 1).unwrap(), 0.0);
    }

    #[test]
    fn energy_residual_is_second_order_for_linear_mode() {
        let d = Domain::interval(40).unwrap();
        let prm = EnergyParams::new(2.0, 0.0).unwrap();
        let cfg = SolverConfig::default().with_grad_tol(1e-12);
        let g = d.sample(|x, _| (PI * x).sin());
        let mut prev = f64::NAN;
        for tau in [0.02, 0.01, 0.005] {
            let traj = evolve(&d, &g, tau, 1, prm, BoundaryRegime::Dirichlet, &cfg).unwrap();
            let r = energy_identity_residual(&traj, 1).unwrap();
            assert!(r <= 0.0);
            let c = r.abs() / (tau * tau * traj.diagnostics[0].np);
            if prev.is_finite() {
                assert!((c / prev - 1.0).abs() < 0.2, "{c} vs {prev}");
            }
            prev = c;
        }
    }

    #[test]
    fn csv_layout() {
        let d = Domain::interval(10).unwrap();
        let prm = EnergyParams::new(2.0, 0.0).unwrap();
        let g = d.sample(|x, _| x * (1.0 - x));
        let traj = evolve(&d, &g, 0.1, 3, prm, BoundaryRegime::Dirichlet, &SolverConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &traj.diagnostics).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "k,t,Np,rayleigh,dual_q,lambda_decay,lambda_rayleigh,mu_from_dual,conservation,energy_residual"
        );
        assert_eq!(lines.count(), 4);
    }

    #[test]
    fn increments_respect_noise_floor() {
        assert_eq!(max_positive_increment(&[3.0, 2.0, 1.0], 0.0), 0.0);
        assert_eq!(max_positive_increment(&[1.0, 1.5, 1.2, 2.0], 0.0), 0.8);
        assert_eq!(max_positive_increment(&[1.0, 1.0 + 1e-12], 1e-9), 0.0);
    }
}
