//! Trajectories of the implicit scheme
//! `(Jp(u^k) - Jp(u^(k-1))) / tau = -A(u^k)`.
//!
//! The scheme is homogeneous of degree one, so states may decay by many
//! orders of magnitude; everything downstream normalizes by `max|u|` before
//! forming powers.

use std::io::{BufRead, Write};

use crate::diagnostics::{self, DiagnosticsRow};
use crate::domain::{Domain, Field};
use crate::elliptic::{zero_pmean_shift, SolveStats, SolverConfig, StepSolver};
use crate::error::{Error, Result};
use crate::operators::{jp, jp_field, BoundaryRegime, EnergyOperator, EnergyParams};

#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    pub domain: Domain,
    pub tau: f64,
    /// `u^0 .. u^K`.
    pub states: Vec<Field>,
    pub regime: BoundaryRegime,
    pub params: EnergyParams,
    /// One row per state.
    pub diagnostics: Vec<DiagnosticsRow>,
    /// Neumann only: the initial datum after the zero-p-mean shift.
    pub projected_initial: Option<Field>,
    /// Solver statistics of steps `1..=K`.
    pub solves: Vec<SolveStats>,
}

impl FlowTrajectory {
    /// Number of steps `K`.
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn last(&self) -> &Field {
        self.states
            .last()
            .expect("a trajectory holds at least its initial state")
    }

    pub fn end_time(&self) -> f64 {
        self.steps() as f64 * self.tau
    }
}

/// Outcome of normalizing a state.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// `u / |u|_p`.
    Normalized(Field),
    /// The state vanished; the limit is identically zero.
    Vanished,
}

impl Profile {
    pub fn field(&self) -> Option<&Field> {
        match self {
            Profile::Normalized(f) => Some(f),
            Profile::Vanished => None,
        }
    }
}

/// Incremental stepping; [`evolve`] and [`evolve_until_stable`] drive it.
pub struct Flow<'d> {
    domain: &'d Domain,
    solver: StepSolver<'d>,
    exact: EnergyOperator<'d>,
    tau: f64,
    states: Vec<Field>,
    rows: Vec<DiagnosticsRow>,
    solves: Vec<SolveStats>,
    projected: Option<Field>,
}

impl<'d> Flow<'d> {
    pub fn start(
        d: &'d Domain,
        g: &[f64],
        tau: f64,
        params: EnergyParams,
        regime: BoundaryRegime,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        d.check_field(g)?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "time step must be positive, got {tau}"
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("initial datum has non-finite values".into()));
        }
        let solver = StepSolver::new(d, params, regime, *cfg)?;
        let exact = EnergyOperator::new(d, EnergyParams::exact(params.p())?, regime)?;
        let (u0, projected) = if regime.is_neumann() {
            let shifted = zero_pmean_shift(d, g, params.p())?;
            (shifted.clone(), Some(shifted))
        } else {
            (g.to_vec(), None)
        };
        let row = diagnostics::basic_row(&exact, tau, 0, &u0, None);
        Ok(Self {
            domain: d,
            solver,
            exact,
            tau,
            states: vec![u0],
            rows: vec![row],
            solves: Vec::new(),
            projected,
        })
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn current(&self) -> &Field {
        self.states.last().expect("non-empty")
    }

    pub fn last_row(&self) -> &DiagnosticsRow {
        self.rows.last().expect("non-empty")
    }

    pub fn advance(&mut self) -> Result<()> {
        let k = self.states.len();
        let prev = self.current();
        let (u, stats) = self.solver.step(prev, self.tau).map_err(|e| Error::Step {
            step: k,
            source: Box::new(e),
        })?;
        let row = diagnostics::basic_row(&self.exact, self.tau, k, &u, Some(prev));
        self.states.push(u);
        self.rows.push(row);
        self.solves.push(stats);
        Ok(())
    }

    pub fn finish(self) -> FlowTrajectory {
        let params = self.solver.operator().params();
        let regime = self.solver.operator().regime();
        FlowTrajectory {
            domain: self.domain.clone(),
            tau: self.tau,
            states: self.states,
            regime,
            params,
            diagnostics: self.rows,
            projected_initial: self.projected,
            solves: self.solves,
        }
    }
}

/// `K` implicit steps from `g` (zero-p-mean shifted first for Neumann).
pub fn evolve(
    d: &Domain,
    g: &[f64],
    tau: f64,
    steps: usize,
    params: EnergyParams,
    regime: BoundaryRegime,
    cfg: &SolverConfig,
) -> Result<FlowTrajectory> {
    if steps == 0 {
        return Err(Error::InvalidParameter("a trajectory needs at least one step".into()));
    }
    let mut flow = Flow::start(d, g, tau, params, regime, cfg)?;
    for _ in 0..steps {
        flow.advance()?;
    }
    Ok(flow.finish())
}

fn check_time(traj: &FlowTrajectory, t: f64) -> Result<usize> {
    let end = traj.end_time();
    if !(t >= 0.0 && t <= end * (1.0 + 1e-12)) {
        return Err(Error::Range(format!("time {t} outside [0, {end}]")));
    }
    // index k with t in ((k-1) tau, k tau], tolerant of t = k * tau rounding
    let k = (t / traj.tau - 1e-9).ceil().max(0.0) as usize;
    Ok(k.min(traj.steps()))
}

/// Piecewise-constant interpolant: `u^k` on `((k-1) tau, k tau]`, `u^0` at `t = 0`.
pub fn interpolant_v(traj: &FlowTrajectory, t: f64) -> Result<Field> {
    let k = check_time(traj, t)?;
    Ok(traj.states[k].clone())
}

/// Piecewise-linear interpolant of `Jp(u^k)` in time.
pub fn interpolant_w(traj: &FlowTrajectory, t: f64) -> Result<Field> {
    let k = check_time(traj, t)?;
    let p = traj.params.p();
    if k == 0 {
        return Ok(jp_field(&traj.states[0], p));
    }
    let theta = ((t - (k - 1) as f64 * traj.tau) / traj.tau).clamp(0.0, 1.0);
    Ok(traj.states[k - 1]
        .iter()
        .zip(&traj.states[k])
        .map(|(&a, &b)| {
            let (ja, jb) = (jp(a, p), jp(b, p));
            ja + theta * (jb - ja)
        })
        .collect())
}

/// `u^k / |u^k|_p`, or [`Profile::Vanished`] once the state has decayed
/// below the normal floating-point range.
pub fn rescaled_profile(traj: &FlowTrajectory, k: usize) -> Result<Profile> {
    let u = traj
        .states
        .get(k)
        .ok_or_else(|| Error::Range(format!("step {k} beyond {}", traj.steps())))?;
    Ok(normalize_lp(&traj.domain, u, traj.params.p()))
}

pub(crate) fn normalize_lp(d: &Domain, u: &[f64], p: f64) -> Profile {
    let s = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(s >= f64::MIN_POSITIVE) {
        return Profile::Vanished;
    }
    let w = d.volume_weight();
    let sum: f64 = u.iter().map(|v| (v / s).abs().powf(p)).sum();
    let norm = (w * sum).powf(1.0 / p);
    Profile::Normalized(u.iter().map(|v| v / s / norm).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenRunOptions {
    /// Fixed step; `None` picks `1/(2 lambda)` after a short bootstrap.
    pub tau: Option<f64>,
    /// Stop once the decay estimate changes by less than this (relative) ...
    pub rel_tol: f64,
    /// ... for this many consecutive steps.
    pub window: usize,
    pub max_steps: usize,
    pub bootstrap_steps: usize,
    pub bootstrap_tau: f64,
}

impl Default for EigenRunOptions {
    fn default() -> Self {
        Self {
            tau: None,
            rel_tol: 1e-8,
            window: 10,
            max_steps: 5000,
            bootstrap_steps: 10,
            bootstrap_tau: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenRun {
    pub trajectory: FlowTrajectory,
    /// Last decay estimate (NaN if the state vanished first).
    pub lambda: f64,
    /// Whether the stopping rule fired before the step budget ran out.
    pub converged: bool,
    pub profile: Profile,
}

/// Step size rule: `1/(2 lambda)` from a short bootstrap run at a fixed step.
pub fn auto_tau(
    d: &Domain,
    g: &[f64],
    params: EnergyParams,
    regime: BoundaryRegime,
    cfg: &SolverConfig,
    opts: &EigenRunOptions,
) -> Result<f64> {
    let boot = evolve(
        d,
        g,
        opts.bootstrap_tau,
        opts.bootstrap_steps.max(1),
        params,
        regime,
        cfg,
    )?;
    let lambda = boot.diagnostics.last().map_or(f64::NAN, |r| r.lambda_decay);
    Ok(if lambda.is_finite() && lambda > 0.0 {
        0.5 / lambda
    } else {
        opts.bootstrap_tau
    })
}

/// Runs the flow until the decay estimate settles, the state vanishes, or
/// the step budget is spent.
pub fn evolve_until_stable(
    d: &Domain,
    g: &[f64],
    params: EnergyParams,
    regime: BoundaryRegime,
    cfg: &SolverConfig,
    opts: &EigenRunOptions,
) -> Result<EigenRun> {
    if !(opts.rel_tol > 0.0) || opts.window == 0 || opts.max_steps == 0 {
        return Err(Error::InvalidParameter(
            "stopping rule needs rel_tol > 0, window and budget >= 1".into(),
        ));
    }
    let tau = match opts.tau {
        Some(t) => t,
        None => auto_tau(d, g, params, regime, cfg, opts)?,
    };
    let mut flow = Flow::start(d, g, tau, params, regime, cfg)?;
    let mut calm = 0;
    let mut prev = f64::NAN;
    let mut converged = false;
    while flow.steps() < opts.max_steps {
        flow.advance()?;
        let lam = flow.last_row().lambda_decay;
        if !lam.is_finite() {
            break;
        }
        if (lam - prev).abs() < opts.rel_tol * lam.abs() {
            calm += 1;
        } else {
            calm = 0;
        }
        prev = lam;
        if calm >= opts.window {
            converged = true;
            break;
        }
    }
    let trajectory = flow.finish();
    let k = trajectory.steps();
    let profile = rescaled_profile(&trajectory, k)?;
    let lambda = trajectory.diagnostics[k].lambda_decay;
    Ok(EigenRun {
        trajectory,
        lambda,
        converged,
        profile,
    })
}

/// Writes a snapshot: a `# key: value` header, then one value per line.
#[allow(clippy::too_many_arguments)]
pub fn write_snapshot<W: Write>(
    mut out: W,
    d: &Domain,
    u: &[f64],
    p: f64,
    regime: BoundaryRegime,
    k: usize,
    tau: f64,
) -> Result<()> {
    d.check_field(u)?;
    let (cols, rows) = d.lattice_shape();
    writeln!(out, "# kind: {}", d.kind())?;
    writeln!(out, "# dims: {} nodes, lattice {}x{}", d.len(), cols, rows)?;
    if d.dimension() == 1 {
        writeln!(out, "# h: {}", d.h())?;
    } else {
        writeln!(out, "# h: {} {}", d.hx(), d.hy())?;
    }
    writeln!(out, "# p: {p}")?;
    writeln!(out, "# regime: {regime}")?;
    writeln!(out, "# k: {k}")?;
    writeln!(out, "# tau: {tau}")?;
    for v in u {
        writeln!(out, "{v:e}")?;
    }
    Ok(())
}

/// Reads the values of a snapshot (header lines are skipped).
pub fn read_snapshot<R: BufRead>(input: R) -> Result<Field> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(
            t.parse::<f64>()
                .map_err(|_| Error::Parse(format!("snapshot line {}: `{t}` is not a number", i + 1)))?,
        );
    }
    Ok(out)
}
