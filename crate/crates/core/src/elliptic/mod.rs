//! Convex minimization behind one implicit time step and behind the inverse
//! of the (regime-dependent) p-Laplacian.
//!
//! The regularization length of [`EnergyParams`] is read as a *relative*
//! value here: a time step scales it by `max|u_prev|`, an inverse solve by
//! `max|u|` of its own solution (a short fixed-point loop). Both maps are
//! then exactly homogeneous, which the flow relies on when states decay by
//! many orders of magnitude.

pub(crate) mod banded;
pub(crate) mod ncg;
mod newton;

use crate::domain::{Domain, Field};
use crate::error::{Error, Result};
use crate::operators::{jp, BoundaryRegime, EnergyOperator, EnergyParams};

use banded::Banded;
use ncg::{Minimum, Objective};

/// Newton first; conjugate gradients take over from wherever it stalls.
pub(crate) fn minimize<O: Objective>(obj: &O, x0: Vec<f64>, cfg: &SolverConfig, abs_floor: f64) -> Result<Minimum> {
    match newton::minimize(obj, x0, cfg, abs_floor) {
        Ok(m) => Ok(m),
        Err(stall) => {
            let target = (cfg.grad_tol * stall.initial_grad_norm).max(abs_floor);
            let rest = SolverConfig {
                grad_tol: f64::MIN_POSITIVE,
                max_iters: cfg.max_iters.saturating_sub(stall.iterations).max(1),
                ..*cfg
            };
            match ncg::minimize(obj, stall.x, &rest, target) {
                Ok(m) => Ok(Minimum {
                    iterations: m.iterations + stall.iterations,
                    initial_grad_norm: stall.initial_grad_norm,
                    ..m
                }),
                Err(Error::NonConvergence { iterations, last, .. }) => {
                    let mut g = vec![0.0; last.len()];
                    obj.value_and_gradient(&last, &mut g);
                    Err(Error::NonConvergence {
                        iterations: iterations + stall.iterations,
                        residual: ncg::norm(&g) / stall.initial_grad_norm.max(f64::MIN_POSITIVE),
                        last,
                    })
                }
                Err(e) => Err(e),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Stop once `|grad F| <= grad_tol * |grad F(start)|`.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Backtracking factor.
    pub shrink: f64,
    /// Armijo constant.
    pub sufficient_decrease: f64,
    /// Conjugate directions are reset to steepest descent this often.
    pub restart_period: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-9,
            max_iters: 100_000,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            restart_period: 1000,
        }
    }
}

impl SolverConfig {
    pub fn with_grad_tol(mut self, grad_tol: f64) -> Self {
        self.grad_tol = grad_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grad_tol must be positive, got {}",
                self.grad_tol
            )));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "shrink must lie in (0,1), got {}",
                self.shrink
            )));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "sufficient decrease constant must lie in (0, 0.5), got {}",
                self.sufficient_decrease
            )));
        }
        if self.max_iters == 0 || self.restart_period == 0 {
            return Err(Error::InvalidParameter("iteration counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final gradient norm relative to the starting one.
    pub residual: f64,
    /// Absolute regularization length of the final minimization.
    pub epsilon: f64,
}

fn max_abs(u: &[f64]) -> f64 {
    u.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn l2(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `F(u) = tau E(u) + (1/p) sum w|u|^p - sum w Jp(u_prev) u`.
struct StepObjective<'a, 'd> {
    op: &'a EnergyOperator<'d>,
    tau: f64,
    weight: f64,
    p: f64,
    force: Vec<f64>,
}

impl Objective for StepObjective<'_, '_> {
    fn len(&self) -> usize {
        self.force.len()
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let e = self.op.energy_and_gradient(x, grad);
        let mut mass = 0.0;
        let mut work = 0.0;
        for i in 0..x.len() {
            let a = x[i].abs();
            let pow = if self.p == 2.0 { a * a } else { a.powf(self.p) };
            mass += pow;
            work += self.force[i] * x[i];
            let j = if a == 0.0 { 0.0 } else { pow / x[i] };
            grad[i] = self.tau * grad[i] + self.weight * (j - self.force[i]);
        }
        self.tau * e + self.weight * (mass / self.p - work)
    }

    fn diagonal(&self, x: &[f64], out: &mut [f64]) -> bool {
        self.op.hessian_diagonal(x, out);
        let top = max_abs(x);
        // keeps the mass curvature finite at sign changes when p < 2
        let floor = 1e-4 * top;
        for (o, &xi) in out.iter_mut().zip(x) {
            let a = xi.abs().max(floor);
            let mass = if self.p == 2.0 || a == 0.0 {
                if self.p == 2.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                a.powf(self.p - 2.0)
            };
            *o = self.tau * *o + self.weight * (self.p - 1.0) * mass;
        }
        true
    }

    fn hessian(&self, x: &[f64]) -> Option<Banded> {
        let mut h = self.op.hessian(x);
        let mut d = vec![0.0; x.len()];
        self.diagonal(x, &mut d);
        let e = h.diagonal();
        let mass: Vec<f64> = d.iter().zip(&e).map(|(di, ei)| di - self.tau * ei).collect();
        h.scale(self.tau);
        h.add_diagonal(&mass);
        Some(h)
    }
}

/// `G(u) = E(u) - sum w f u`.
struct InverseObjective<'a, 'd> {
    op: &'a EnergyOperator<'d>,
    weight: f64,
    rhs: &'a [f64],
}

impl Objective for InverseObjective<'_, '_> {
    fn len(&self) -> usize {
        self.rhs.len()
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let e = self.op.energy_and_gradient(x, grad);
        let mut work = 0.0;
        for i in 0..x.len() {
            work += self.rhs[i] * x[i];
            grad[i] -= self.weight * self.rhs[i];
        }
        e - self.weight * work
    }

    fn diagonal(&self, x: &[f64], out: &mut [f64]) -> bool {
        self.op.hessian_diagonal(x, out);
        true
    }

    fn hessian(&self, x: &[f64]) -> Option<Banded> {
        Some(self.op.hessian(x))
    }
}

/// Repeated implicit steps on one domain/regime.
#[derive(Debug, Clone)]
pub struct StepSolver<'d> {
    op: EnergyOperator<'d>,
    cfg: SolverConfig,
}

impl<'d> StepSolver<'d> {
    pub fn new(domain: &'d Domain, params: EnergyParams, regime: BoundaryRegime, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            op: EnergyOperator::new(domain, params, regime)?,
            cfg,
        })
    }

    pub fn operator(&self) -> &EnergyOperator<'d> {
        &self.op
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Solves `(Jp(u) - Jp(u_prev))/tau = -A(u)` for `u`, warm-started at `u_prev`.
    pub fn step(&self, u_prev: &[f64], tau: f64) -> Result<(Field, SolveStats)> {
        let d = self.op.domain();
        d.check_field(u_prev)?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "time step must be positive, got {tau}"
            )));
        }
        let scale = max_abs(u_prev);
        if scale == 0.0 {
            return Ok((vec![0.0; u_prev.len()], SolveStats::default()));
        }
        let p = self.op.params().p();
        let op = self.op.with_epsilon(self.op.params().epsilon() * scale);
        let weight = d.volume_weight();
        let force: Vec<f64> = u_prev.iter().map(|&z| jp(z, p)).collect();
        let floor = 1e-14 * weight * l2(&force);
        let obj = StepObjective {
            op: &op,
            tau,
            weight,
            p,
            force,
        };
        let m = minimize(&obj, u_prev.to_vec(), &self.cfg, floor)?;
        // the constant mode of a Neumann step is fixed by conservation of sum Jp(u)
        let x = if self.op.regime().is_neumann() {
            let target: f64 = obj.force.iter().sum();
            let size: f64 = obj.force.iter().map(|v| v.abs()).sum();
            // a rounding-level total is zero; kept as is, it would stay fixed
            // while the states decay and eventually dominate them
            let target = if target.abs() <= 1e-12 * size { 0.0 } else { target };
            shift_to_pmean(&m.x, p, target)
        } else {
            m.x
        };
        Ok((
            x,
            SolveStats {
                iterations: m.iterations,
                residual: m.grad_norm / m.initial_grad_norm.max(f64::MIN_POSITIVE),
                epsilon: op.params().epsilon(),
            },
        ))
    }
}

/// Cap on the regularization-length fixed point of an inverse solve.
const MAX_LENGTH_PASSES: usize = 6;

/// Repeated inverse solves `A(u) = f` on one domain/regime.
#[derive(Debug, Clone)]
pub struct InverseSolver<'d> {
    op: EnergyOperator<'d>,
    cfg: SolverConfig,
}

impl<'d> InverseSolver<'d> {
    pub fn new(domain: &'d Domain, params: EnergyParams, regime: BoundaryRegime, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            op: EnergyOperator::new(domain, params, regime)?,
            cfg,
        })
    }

    pub fn operator(&self) -> &EnergyOperator<'d> {
        &self.op
    }

    /// Weak solution of `A(u) = f`; Neumann solutions are normalized to zero p-mean.
    pub fn solve(&self, f: &[f64], warm: Option<&[f64]>) -> Result<(Field, SolveStats)> {
        let d = self.op.domain();
        d.check_field(f)?;
        let p = self.op.params().p();
        let fmax = max_abs(f);
        if fmax == 0.0 {
            return Ok((vec![0.0; f.len()], SolveStats::default()));
        }

        let mut rhs = f.to_vec();
        if self.op.regime().is_neumann() {
            let total: f64 = f.iter().sum();
            let scale: f64 = f.iter().map(|v| v.abs()).sum();
            if total.abs() > 1e-10 * scale {
                return Err(Error::Compatibility(format!(
                    "Neumann data must integrate to zero (relative mean {:.3e})",
                    total / scale
                )));
            }
            let mean = total / f.len() as f64;
            rhs.iter_mut().for_each(|v| *v -= mean);
        }

        let weight = d.volume_weight();
        // tolerances are measured against the gradient at zero, so a good warm start cannot tighten them
        let reference = weight * l2(&rhs);
        let floor = (self.cfg.grad_tol * reference).max(1e-14 * reference);
        let mut x = match warm {
            Some(w) => {
                d.check_field(w)?;
                w.to_vec()
            }
            None => vec![0.0; f.len()],
        };
        let eps = self.op.params().epsilon();
        let neumann = self.op.regime().is_neumann();
        let settle = |x: Field| -> Result<Field> {
            if neumann {
                zero_pmean_shift(d, &x, p)
            } else {
                Ok(x)
            }
        };
        // the length should be eps * max|u| at the solution u itself; start from
        // the warm start (or the data) and repeat until it settles
        let seed = match warm {
            Some(w) if max_abs(w) > 0.0 => max_abs(w),
            _ => fmax.powf(1.0 / (p - 1.0)),
        };
        let mut length = eps * seed;
        let mut stats = SolveStats::default();
        let passes = if p == 2.0 || eps == 0.0 { 1 } else { MAX_LENGTH_PASSES };
        let mut u = x.clone();
        for _ in 0..passes {
            let op = self.op.with_epsilon(length);
            stats.epsilon = length;
            let obj = InverseObjective {
                op: &op,
                weight,
                rhs: &rhs,
            };
            let m = minimize(&obj, x, &self.cfg, floor)?;
            stats.iterations += m.iterations;
            stats.residual = m.grad_norm / reference;
            x = m.x;
            u = settle(x.clone())?;
            let sized = eps * max_abs(&u);
            if !(sized > 0.0) || (sized - length).abs() <= 1e-12 * length {
                break;
            }
            length = sized;
        }
        Ok((u, stats))
    }
}

/// One step of the implicit scheme: the minimizer of
/// `tau E(u) + (1/p) int |u|^p - int Jp(u_prev) u`.
pub fn implicit_step(
    d: &Domain,
    u_prev: &[f64],
    tau: f64,
    params: EnergyParams,
    regime: BoundaryRegime,
    cfg: &SolverConfig,
) -> Result<Field> {
    Ok(StepSolver::new(d, params, regime, *cfg)?.step(u_prev, tau)?.0)
}

/// Weak solution of `-Delta_p u = f` (or its Robin / Neumann / fractional
/// counterpart); minimizes `E(u) - int f u`.
pub fn inverse_operator(
    d: &Domain,
    f: &[f64],
    params: EnergyParams,
    regime: BoundaryRegime,
    cfg: &SolverConfig,
) -> Result<Field> {
    Ok(InverseSolver::new(d, params, regime, *cfg)?.solve(f, None)?.0)
}

/// Returns `u + c` with `sum w Jp(u_i + c) = 0`; `c` by bisection on the
/// increasing map `c -> sum Jp(u_i + c)`.
pub fn zero_pmean_shift(d: &Domain, u: &[f64], p: f64) -> Result<Field> {
    d.check_field(u)?;
    if !(p > 1.0) {
        return Err(Error::InvalidParameter(format!("p must exceed 1, got {p}")));
    }
    Ok(shift_to_zero_pmean(u, p))
}

pub(crate) fn shift_to_zero_pmean(u: &[f64], p: f64) -> Field {
    shift_to_pmean(u, p, 0.0)
}

/// `u + c` with `sum Jp(u_i + c) = target`.
pub(crate) fn shift_to_pmean(u: &[f64], p: f64, target: f64) -> Field {
    if u.is_empty() {
        return Vec::new();
    }
    let total = |c: f64| -> f64 { u.iter().map(|&z| jp(z + c, p)).sum::<f64>() - target };
    let (mut lo, mut hi) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &z| {
        (lo.min(-z), hi.max(-z))
    });
    // widen until total(lo) <= 0 <= total(hi)
    let mut width = (hi - lo)
        .max(u.iter().fold(0.0f64, |m, z| m.max(z.abs())))
        .max(f64::MIN_POSITIVE);
    while total(lo) > 0.0 {
        lo -= width;
        width *= 2.0;
    }
    while total(hi) < 0.0 {
        hi += width;
        width *= 2.0;
    }
    while lo < hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let t = total(mid);
        if t == 0.0 {
            lo = mid;
            hi = mid;
        } else if t < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = if total(lo).abs() <= total(hi).abs() { lo } else { hi };
    u.iter().map(|&z| z + c).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::integrate_power;
    use crate::operators::{energy, energy_gradient, jp_field};
    use crate::sampling::{random_field, zero_mean_random_field};
    use crate::testutil::rel_err;
    use std::f64::consts::PI;

    fn sine(d: &Domain) -> (Field, f64) {
        let h = d.h();
        let u = d.sample(|x, _| (PI * x).sin());
        (u, 4.0 / (h * h) * (0.5 * PI * h).sin().powi(2))
    }

    #[test]
    fn linear_step_damps_sine_mode() {
        let d = Domain::interval(199).unwrap();
        let (phi, lam) = sine(&d);
        let prm = EnergyParams::new(2.0, 0.0).unwrap();
        let cfg = SolverConfig::default();
        let tau = 0.05;
        let u = implicit_step(&d, &phi, tau, prm, BoundaryRegime::Dirichlet, &cfg).unwrap();
        let expect: Vec<f64> = phi.iter().map(|v| v / (1.0 + lam * tau)).collect();
        assert!(rel_err(&u, &expect) <= 10.0 * cfg.grad_tol, "{}", rel_err(&u, &expect));
    }

    #[test]
    fn zero_data_short_circuits() {
        let d = Domain::interval(20).unwrap();
        let prm = EnergyParams::new(1.5, 1e-6).unwrap();
        let cfg = SolverConfig::default();
        let z = vec![0.0; 20];
        assert_eq!(
            implicit_step(&d, &z, 0.1, prm, BoundaryRegime::Dirichlet, &cfg).unwrap(),
            z
        );
        assert_eq!(
            inverse_operator(&d, &z, prm, BoundaryRegime::Dirichlet, &cfg).unwrap(),
            z
        );
    }

    #[test]
    fn linear_inverse_of_sine_mode() {
        let d = Domain::interval(199).unwrap();
        let (phi, lam) = sine(&d);
        let prm = EnergyParams::new(2.0, 0.0).unwrap();
        let cfg = SolverConfig::default();
        let u = inverse_operator(&d, &phi, prm, BoundaryRegime::Dirichlet, &cfg).unwrap();
        let expect: Vec<f64> = phi.iter().map(|v| v / lam).collect();
        assert!(rel_err(&u, &expect) < 1e-8, "{}", rel_err(&u, &expect));
    }

    #[test]
    fn neumann_inverse_of_cosine_mode() {
        // graph Laplacian on a path of n nodes: cos(pi (i + 1/2)/n) has eigenvalue (2/h^2)(1 - cos(pi/n))
        let n = 199;
        let d = Domain::interval(n).unwrap();
        let h = d.h();
        let phi: Vec<f64> = (0..n).map(|i| (PI * (i as f64 + 0.5) / n as f64).cos()).collect();
        let lam = 4.0 / (h * h) * (0.5 * PI / n as f64).sin().powi(2);
        let prm = EnergyParams::new(2.0, 0.0).unwrap();
        let cfg = SolverConfig::default();
        let u = inverse_operator(&d, &phi, prm, BoundaryRegime::Neumann, &cfg).unwrap();
        let expect: Vec<f64> = phi.iter().map(|v| v / lam).collect();
        assert!(rel_err(&u, &expect) < 1e-8, "{}", rel_err(&u, &expect));
        assert!(u.iter().sum::<f64>().abs() < 1e-12 * u.iter().map(|v| v.abs()).sum::<f64>());
    }

    #[test]
    fn neumann_inverse_rejects_nonzero_mean() {
        let d = Domain::interval(10).unwrap();
        let prm = EnergyParams::new(2.0, 0.0).unwrap();
        let f = vec![1.0; 10];
        assert!(matches!(
            inverse_operator(&d, &f, prm, BoundaryRegime::Neumann, &SolverConfig::default()),
            Err(Error::Compatibility(_))
        ));
    }

    #[test]
    fn pmean_shift_cases() {
        let d = Domain::interval(9).unwrap();
        let u: Vec<f64> = (0..9).map(|i| d.x(i)).collect();
        let v = zero_pmean_shift(&d, &u, 2.0).unwrap();
        assert!((v[0] - u[0] + 0.5).abs() < 1e-14);

        let sym = vec![-1.0, -0.5, 0.0, 0.5, 1.0];
        let d5 = Domain::interval(5).unwrap();
        assert_eq!(zero_pmean_shift(&d5, &sym, 3.0).unwrap(), sym);
    }

    #[test]
    fn pmean_shift_two_points_p3() {
        // oracle: bisection on |c-1|(c-1) + |c+2|(c+2) = 0 done independently
        let g = |c: f64| (c - 1.0).abs() * (c - 1.0) + (c + 2.0).abs() * (c + 2.0);
        let (mut a, mut b) = (-10.0f64, 10.0f64);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if g(m) < 0.0 {
                a = m
            } else {
                b = m
            }
        }
        // for c in (-2, 1): -(c-1)^2 + (c+2)^2 = 6c + 3, so c = -1/2
        assert!((a + 0.5).abs() < 1e-12);
        let shifted = shift_to_zero_pmean(&[-1.0, 2.0], 3.0);
        let c = shifted[0] + 1.0;
        assert!((c - a).abs() < 1e-12);
        let residual: f64 = shifted.iter().map(|&z| jp(z, 3.0)).sum();
        let scale: f64 = shifted.iter().map(|&z| jp(z, 3.0).abs()).sum();
        assert!(residual.abs() <= 1e-12 * scale);
    }

    #[test]
    fn inverse_is_right_inverse() {
        let d = Domain::interval(64).unwrap();
        let cfg = SolverConfig::default();
        for p in [1.5, 2.0, 3.0] {
            let prm = EnergyParams::new(p, 1e-6).unwrap();
            for regime in [
                BoundaryRegime::Dirichlet,
                BoundaryRegime::Robin { beta: 1.0 },
                BoundaryRegime::Neumann,
                BoundaryRegime::FractionalDirichlet { s: 0.5 },
            ] {
                let f = zero_mean_random_field(64, 3);
                let solver = InverseSolver::new(&d, prm, regime, cfg).unwrap();
                let (u, stats) = solver.solve(&f, None).unwrap();
                let back = solver.operator().with_epsilon(stats.epsilon).density_gradient(&u);
                // weighted l^q
                let q = prm.q();
                let diff: Vec<f64> = back.iter().zip(&f).map(|(a, b)| a - b).collect();
                let err = (integrate_power(&d, &diff, q).unwrap() / integrate_power(&d, &f, q).unwrap()).powf(1.0 / q);
                assert!(err <= 10.0 * cfg.grad_tol, "{regime} p={p}: {err}");
            }
        }
    }

    #[test]
    fn inverse_is_homogeneous() {
        let d = Domain::interval(48).unwrap();
        let cfg = SolverConfig::default().with_grad_tol(1e-10);
        for p in [1.5, 3.0] {
            let prm = EnergyParams::new(p, 1e-6).unwrap();
            let q = prm.q();
            let f = random_field(48, 8);
            let c = -2.5f64;
            let cf: Vec<f64> = f.iter().map(|v| c * v).collect();
            let u = inverse_operator(&d, &f, prm, BoundaryRegime::Dirichlet, &cfg).unwrap();
            let uc = inverse_operator(&d, &cf, prm, BoundaryRegime::Dirichlet, &cfg).unwrap();
            let factor = jp(c, q);
            let expect: Vec<f64> = u.iter().map(|v| factor * v).collect();
            assert!(rel_err(&uc, &expect) <= 10.0 * 1e-9, "p={p}: {}", rel_err(&uc, &expect));
        }
    }

    #[test]
    fn step_monotonicities() {
        let d = Domain::interval(40).unwrap();
        let cfg = SolverConfig::default();
        for p in [1.5, 2.0, 3.0] {
            let prm = EnergyParams::new(p, 1e-6).unwrap();
            let exact = EnergyParams::exact(p).unwrap();
            for regime in [
                BoundaryRegime::Dirichlet,
                BoundaryRegime::Robin { beta: 0.5 },
                BoundaryRegime::Neumann,
                BoundaryRegime::FractionalDirichlet { s: 0.3 },
            ] {
                let u0 = random_field(40, 17);
                let solver = StepSolver::new(&d, prm, regime, cfg).unwrap();
                let (u1, _) = solver.step(&u0, 0.01).unwrap();
                let n0 = integrate_power(&d, &u0, p).unwrap();
                let n1 = integrate_power(&d, &u1, p).unwrap();
                assert!(n1 <= n0 * (1.0 + 1e-10), "{regime} p={p}");
                let e0 = energy(&d, &u0, exact, regime).unwrap();
                let e1 = energy(&d, &u1, exact, regime).unwrap();
                assert!(e1 <= e0 * (1.0 + 1e-10), "{regime} p={p}");
                if regime.is_neumann() {
                    let c0: f64 = jp_field(&u0, p).iter().sum();
                    let c1: f64 = jp_field(&u1, p).iter().sum();
                    let scale: f64 = jp_field(&u0, p).iter().map(|v| v.abs()).sum();
                    assert!((c1 - c0).abs() <= 10.0 * cfg.grad_tol * scale);
                }
            }
        }
    }

    #[test]
    fn step_respects_comparison() {
        let d = Domain::interval(50).unwrap();
        let cfg = SolverConfig::default();
        for p in [1.5, 2.0, 3.0] {
            let prm = EnergyParams::new(p, 1e-6).unwrap();
            let w = random_field(50, 4);
            let bump = crate::sampling::positive_random_field(50, 5);
            let u: Vec<f64> = w.iter().zip(&bump).map(|(a, b)| a + 0.3 * b).collect();
            let su = implicit_step(&d, &u, 0.02, prm, BoundaryRegime::Dirichlet, &cfg).unwrap();
            let sw = implicit_step(&d, &w, 0.02, prm, BoundaryRegime::Dirichlet, &cfg).unwrap();
            for i in 0..50 {
                assert!(su[i] >= sw[i] - 10.0 * cfg.grad_tol, "p={p} i={i}");
            }
        }
    }

    #[test]
    fn step_is_homogeneous() {
        let d = Domain::interval(30).unwrap();
        let cfg = SolverConfig::default().with_grad_tol(1e-11);
        let prm = EnergyParams::new(1.5, 1e-6).unwrap();
        let u = random_field(30, 2);
        let tiny: Vec<f64> = u.iter().map(|v| 1e-40 * v).collect();
        let a = implicit_step(&d, &u, 0.05, prm, BoundaryRegime::Dirichlet, &cfg).unwrap();
        let b = implicit_step(&d, &tiny, 0.05, prm, BoundaryRegime::Dirichlet, &cfg).unwrap();
        let rescaled: Vec<f64> = b.iter().map(|v| 1e40 * v).collect();
        assert!(rel_err(&rescaled, &a) < 1e-8);
    }

    #[test]
    fn step_satisfies_scheme_equation() {
        let d = Domain::rectangle(8, 6, 1.0, 1.0).unwrap();
        let prm = EnergyParams::new(2.5, 1e-6).unwrap();
        let cfg = SolverConfig::default();
        let u0 = random_field(d.len(), 12);
        let tau = 0.03;
        let u1 = implicit_step(&d, &u0, tau, prm, BoundaryRegime::Dirichlet, &cfg).unwrap();
        let eps = 1e-6 * u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let g = energy_gradient(&d, &u1, prm.with_epsilon_unchecked(eps), BoundaryRegime::Dirichlet).unwrap();
        let lhs: Vec<f64> = (0..d.len()).map(|i| (jp(u1[i], 2.5) - jp(u0[i], 2.5)) / tau).collect();
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        assert!(rel_err(&lhs, &rhs) < 1e-6);
    }
}
