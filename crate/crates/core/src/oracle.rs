//! Reference ground states, computed without running the flow.
//!
//! [`minimize_rayleigh`] minimizes the Rayleigh quotient `p E(u) / int |u|^p`
//! by conjugate gradients (for Neumann the quotient is composed with the
//! zero-p-mean shift). [`dense_linear_reference`] handles `p = 2` with a dense
//! symmetric eigensolve of a matrix assembled straight from the stencil and
//! kernel formulas, so it shares no code with the energy evaluation.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::domain::{integrate_power, Domain, Field};
use crate::elliptic::ncg::{dot, minimize, Objective};
use crate::elliptic::{shift_to_zero_pmean, InverseSolver, SolverConfig};
use crate::error::{Error, Result};
use crate::operators::{jp, BoundaryRegime, EnergyOperator, EnergyParams};
use crate::sampling::positive_random_field;

/// Largest node count accepted by [`dense_linear_reference`].
pub const DENSE_LIMIT: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    pub lambda: f64,
    /// `lambda^(1/(p-1))`.
    pub mu: f64,
    /// Unit `L^p` norm, positive at the node of largest magnitude.
    pub extremal: Field,
    pub iterations: usize,
    /// `|A(phi) - lambda Jp(phi)| / |lambda Jp(phi)|`.
    pub residual: f64,
}

impl EigenResult {
    /// `lambda mu residual iterations`
    pub fn summary(&self) -> String {
        format!("{} {} {:e} {}", self.lambda, self.mu, self.residual, self.iterations)
    }
}

struct Rayleigh<'a, 'd> {
    op: &'a EnergyOperator<'d>,
    weight: f64,
    p: f64,
    neumann: bool,
}

impl Rayleigh<'_, '_> {
    fn admissible(&self, x: &[f64]) -> Field {
        if self.neumann {
            shift_to_zero_pmean(x, self.p)
        } else {
            x.to_vec()
        }
    }
}

impl Objective for Rayleigh<'_, '_> {
    fn len(&self) -> usize {
        self.op.domain().len()
    }

    // For Neumann the chain rule through the shift is the identity here:
    // the gradient below already sums to zero on zero-p-mean fields.
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let u = self.admissible(x);
        let e = self.op.energy_and_gradient(&u, grad);
        let mass: f64 = self.weight * u.iter().map(|v| v.abs().powf(self.p)).sum::<f64>();
        if !(mass > 0.0) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::INFINITY;
        }
        let r = self.p * e / mass;
        for (g, &ui) in grad.iter_mut().zip(&u) {
            *g = self.p * (*g - r * self.weight * jp(ui, self.p)) / mass;
        }
        r
    }

    fn diagonal(&self, x: &[f64], out: &mut [f64]) -> bool {
        let u = self.admissible(x);
        self.op.hessian_diagonal(&u, out);
        let mass: f64 = self.weight * u.iter().map(|v| v.abs().powf(self.p)).sum::<f64>();
        out.iter_mut().for_each(|o| *o *= self.p / mass);
        true
    }
}

fn max_abs(u: &[f64]) -> f64 {
    u.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn l2(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn unit_lp(d: &Domain, u: &[f64], p: f64) -> Result<Field> {
    let s = max_abs(u);
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Degenerate("field vanishes or is not finite".into()));
    }
    let scaled: Field = u.iter().map(|v| v / s).collect();
    let norm = integrate_power(d, &scaled, p)?.powf(1.0 / p);
    Ok(scaled.iter().map(|v| v / norm).collect())
}

/// Multiplier and eigen-equation defect of `u` under `op`.
///
/// The multiplier is `<u, grad E> / int |u|^p`, the value that makes the
/// defect orthogonal to `u`. It equals the quotient `p E / int |u|^p` when
/// the energy is exactly p-homogeneous, and is the quantity inverse
/// iteration converges to when the regularization is active.
fn quotient_and_residual(op: &EnergyOperator, u: &[f64]) -> (f64, f64) {
    let d = op.domain();
    let p = op.params().p();
    let w = d.volume_weight();
    let mut grad = vec![0.0; u.len()];
    op.energy_and_gradient(u, &mut grad);
    let mass = w * u.iter().map(|v| v.abs().powf(p)).sum::<f64>();
    let lambda = u.iter().zip(&grad).map(|(a, b)| a * b).sum::<f64>() / mass;
    let target: Field = u.iter().map(|&v| lambda * w * jp(v, p)).collect();
    let defect: Field = grad.iter().zip(&target).map(|(g, t)| g - t).collect();
    (lambda, l2(&defect) / l2(&target))
}

/// Defects at which the descent phase hands over to inverse iteration.
const COARSE_RESIDUAL: f64 = 1e-4;
const FINE_RESIDUAL: f64 = 1e-8;
const DESCENT_ROUNDS: usize = 6;
const POLISH_PATIENCE: usize = 10;
const MAX_POLISH: usize = 500;
const MAX_EXTRAPOLATION: f64 = 1e3;

/// Ground state from a pseudo-random positive start determined by `seed`.
pub fn minimize_rayleigh(
    d: &Domain,
    params: EnergyParams,
    regime: BoundaryRegime,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<EigenResult> {
    let start = positive_random_field(d.len(), seed);
    minimize_rayleigh_from(d, params, regime, cfg, &start)
}

/// Ground state reached from `init`.
///
/// The regularization length is `epsilon * max|u|` at the current iterate,
/// matching the convention of the time stepper; it is refreshed between
/// rounds until the eigen-equation defect is within `cfg.grad_tol`.
pub fn minimize_rayleigh_from(
    d: &Domain,
    params: EnergyParams,
    regime: BoundaryRegime,
    cfg: &SolverConfig,
    init: &[f64],
) -> Result<EigenResult> {
    cfg.validate()?;
    d.check_field(init)?;
    let base = EnergyOperator::new(d, params, regime)?;
    let p = params.p();
    let neumann = regime.is_neumann();
    let admissible = |x: &[f64]| -> Field {
        if neumann {
            shift_to_zero_pmean(x, p)
        } else {
            x.to_vec()
        }
    };

    let mut u = unit_lp(d, &admissible(init), p)?;
    // Stalls near the rounding floor are common for p < 2, so each pass gets
    // a budget proportional to the grid rather than the full allowance.
    let pass_budget = cfg.max_iters.min(20 * d.len() + 2000);
    let inverse = InverseSolver::new(
        d,
        params,
        regime,
        SolverConfig {
            max_iters: pass_budget,
            ..*cfg
        },
    )?;
    let stage = Stage {
        base: &base,
        inverse: &inverse,
        cfg: SolverConfig {
            max_iters: pass_budget,
            ..*cfg
        },
        admissible: &admissible,
    };

    // A coarse descent followed by inverse iteration is enough for most
    // problems. When the inverse map is poorly conditioned (sign changes
    // with p < 2) polishing stalls, and deeper descents take over.
    let mut iterations = 0;
    for level in [COARSE_RESIDUAL, FINE_RESIDUAL, 0.0] {
        let target = cfg.grad_tol.max(level);
        iterations += stage.descend(&mut u, target)?;
        iterations += stage.polish(&mut u)?;
        if stage.residual(&u).1 <= cfg.grad_tol {
            break;
        }
    }

    let op = base.with_epsilon(params.epsilon() * max_abs(&u));
    let (lambda, residual) = quotient_and_residual(&op, &u);
    if !(residual <= 10.0 * cfg.grad_tol) {
        return Err(Error::NonConvergence {
            iterations,
            residual,
            last: u,
        });
    }
    let extremal = extremal_sign_normalize(&u, regime, 10.0 * cfg.grad_tol)?;
    Ok(EigenResult {
        lambda,
        mu: lambda.powf(1.0 / (p - 1.0)),
        extremal,
        iterations,
        residual,
    })
}

/// One solve configuration shared by the descent and polishing phases.
struct Stage<'a, F: Fn(&[f64]) -> Field> {
    base: &'a EnergyOperator<'a>,
    inverse: &'a InverseSolver<'a>,
    cfg: SolverConfig,
    admissible: &'a F,
}

impl<F: Fn(&[f64]) -> Field> Stage<'_, F> {
    fn operator(&self, u: &[f64]) -> EnergyOperator<'_> {
        self.base.with_epsilon(self.base.params().epsilon() * max_abs(u))
    }

    fn residual(&self, u: &[f64]) -> (f64, f64) {
        quotient_and_residual(&self.operator(u), u)
    }

    fn normalize(&self, x: &[f64]) -> Result<Field> {
        let d = self.base.domain();
        unit_lp(d, &(self.admissible)(x), self.base.params().p())
    }

    /// Conjugate gradients on the quotient until the defect is within
    /// `target`. Under the Neumann constraint the gradient of the quotient
    /// and the defect are not proportional, so the gradient floor is
    /// tightened round by round. The regularization length is refreshed
    /// between rounds.
    fn descend(&self, u: &mut Field, target: f64) -> Result<usize> {
        let d = self.base.domain();
        let p = self.base.params().p();
        let w = d.volume_weight();
        // the minimizer stops on an absolute floor, so the relative test is disabled
        let inner = SolverConfig {
            grad_tol: f64::MIN_POSITIVE,
            ..self.cfg
        };
        let mut iterations = 0;
        let mut level = target;
        for _ in 0..DESCENT_ROUNDS {
            let op = self.operator(u);
            let (lambda, residual) = quotient_and_residual(&op, u);
            if residual <= target {
                break;
            }
            let jnorm = l2(&u.iter().map(|&v| w * jp(v, p)).collect::<Vec<_>>());
            // |grad R| = p * residual * lambda |w Jp(u)| on unit-norm fields
            let floor = 0.5 * level * p * lambda * jnorm;
            let obj = Rayleigh {
                op: &op,
                weight: w,
                p,
                neumann: self.base.regime().is_neumann(),
            };
            let (x, it) = match minimize(&obj, u.clone(), &inner, floor) {
                Ok(m) => (m.x, m.iterations),
                Err(Error::NonConvergence {
                    iterations: it, last, ..
                }) => (last, it),
                Err(e) => return Err(e),
            };
            iterations += it;
            *u = self.normalize(&x)?;
            level = (0.01 * level).max(self.cfg.grad_tol);
        }
        Ok(iterations)
    }

    /// Inverse iteration `u <- A^{-1}(Jp(u))`: each solve is a convex problem
    /// with no singular mass term, and the fixed point is the eigen-equation
    /// itself. The defect need not fall monotonically, so the iteration
    /// always advances and the best iterate is kept in `u`.
    fn polish(&self, u: &mut Field) -> Result<usize> {
        let p = self.base.params().p();
        let mut iterations = 0;
        let mut stalled = 0;
        let mut best = self.residual(u).1;
        let mut current = u.clone();
        let mut rounds = 0;
        let mut previous_step: Option<Field> = None;
        while best > self.cfg.grad_tol && stalled < POLISH_PATIENCE && rounds < MAX_POLISH {
            rounds += 1;
            let (lambda, _) = self.residual(&current);
            let f: Field = current.iter().map(|&v| jp(v, p)).collect();
            let warm: Field = current.iter().map(|v| v * lambda.powf(-1.0 / (p - 1.0))).collect();
            let v = match self.inverse.solve(&f, Some(&warm)) {
                Ok((v, stats)) => {
                    iterations += stats.iterations;
                    v
                }
                Err(Error::NonConvergence {
                    iterations: it, last, ..
                }) => {
                    iterations += it;
                    last
                }
                Err(e) => return Err(e),
            };
            let next = self.normalize(&v)?;
            let mut r = self.residual(&next).1;
            let step: Field = next.iter().zip(&current).map(|(a, b)| a - b).collect();
            // a slowly contracting mode shows up as nearly parallel steps;
            // extrapolate along it when that lowers the defect
            if let Some(prev) = previous_step.as_ref() {
                let c = dot(&step, prev) / dot(prev, prev);
                if c > 0.0 && c < 1.0 {
                    let jump = (c / (1.0 - c)).min(MAX_EXTRAPOLATION);
                    let guess: Field = next.iter().zip(&step).map(|(a, s)| a + jump * s).collect();
                    let guess = self.normalize(&guess)?;
                    let rg = self.residual(&guess).1;
                    if rg < r {
                        r = rg;
                        current = guess;
                        previous_step = None;
                    } else {
                        current = next;
                        previous_step = Some(step);
                    }
                } else {
                    current = next;
                    previous_step = Some(step);
                }
            } else {
                current = next;
                previous_step = Some(step);
            }
            if r < 0.9 * best {
                stalled = 0;
            } else {
                stalled += 1;
            }
            if r < best {
                best = r;
                *u = current.clone();
            }
        }
        Ok(iterations)
    }
}

/// Flips `u` so that its largest-magnitude entry is positive and, for the
/// single-signed regimes, checks that no entry falls below `-tol * max|u|`.
pub fn extremal_sign_normalize(u: &[f64], regime: BoundaryRegime, tol: f64) -> Result<Field> {
    let (peak, _) = u.iter().enumerate().fold(
        (0, 0.0f64),
        |(bi, bv), (i, &v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) },
    );
    let scale = max_abs(u);
    if !(scale > 0.0) {
        return Err(Error::Degenerate("cannot normalize the sign of a zero field".into()));
    }
    let out: Field = if u[peak] < 0.0 {
        u.iter().map(|v| -v).collect()
    } else {
        u.to_vec()
    };
    if regime.single_signed() {
        let min = out.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -tol * scale {
            return Err(Error::SignViolation { min_value: min / scale });
        }
    }
    Ok(out)
}

/// Density operator matrix `A` with `A u = energy gradient / h^n` at `p = 2`.
fn linear_density_matrix(d: &Domain, regime: BoundaryRegime) -> DMatrix<f64> {
    let n = d.len();
    let w = d.volume_weight();
    let mut a = DMatrix::<f64>::zeros(n, n);
    match regime {
        BoundaryRegime::FractionalDirichlet { s } => {
            let h = d.h();
            let expo = 1.0 + 2.0 * s;
            for i in 0..n {
                let xi = d.x(i);
                let mut diag = 2.0 * h * ((xi).powf(-2.0 * s) + (1.0 - xi).powf(-2.0 * s)) / (2.0 * s);
                for j in 0..n {
                    if i != j {
                        let kij = h * h / (xi - d.x(j)).abs().powf(expo);
                        a[(i, j)] = -2.0 * kij / w;
                        diag += 2.0 * kij;
                    }
                }
                a[(i, i)] = diag / w;
            }
        }
        _ => {
            let (hx, hy) = (d.hx(), d.hy());
            let (cx, cy) = (1.0 / (hx * hx), 1.0 / (hy * hy));
            let coords = d.coords();
            for i in 0..n {
                let mut diag = 0.0;
                for j in d.neighbours(i) {
                    let c = if coords[j][1] == coords[i][1] { cx } else { cy };
                    a[(i, j)] = -c;
                    diag += c;
                }
                if matches!(regime, BoundaryRegime::Dirichlet) {
                    // every lattice edge counts, exterior values being zero
                    diag = 2.0 * cx + if d.dimension() == 2 { 2.0 * cy } else { 0.0 };
                }
                a[(i, i)] = diag;
            }
            if let BoundaryRegime::Robin { beta } = regime {
                for &(i, wb) in d.boundary_nodes() {
                    a[(i, i)] += beta * wb / w;
                }
            }
        }
    }
    a
}

/// Linear (`p = 2`) ground state by a dense symmetric eigensolve. For
/// Neumann the constant null mode is skipped.
pub fn dense_linear_reference(d: &Domain, regime: BoundaryRegime) -> Result<EigenResult> {
    regime.check_domain(d)?;
    let n = d.len();
    if n > DENSE_LIMIT {
        return Err(Error::Budget(format!(
            "dense reference is limited to {DENSE_LIMIT} nodes, got {n}"
        )));
    }
    let a = linear_density_matrix(d, regime);
    let eig = SymmetricEigen::new(a);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = if regime.is_neumann() {
        1e-9 * top
    } else {
        f64::NEG_INFINITY
    };
    let (idx, lambda) = eig.eigenvalues.iter().enumerate().filter(|(_, &v)| v > floor).fold(
        (usize::MAX, f64::INFINITY),
        |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) },
    );
    if idx == usize::MAX {
        return Err(Error::Degenerate("no admissible eigenvalue".into()));
    }
    let v: Field = eig.eigenvectors.column(idx).iter().cloned().collect();
    let v = unit_lp(d, &v, 2.0)?;
    let extremal = extremal_sign_normalize(&v, regime, 1e-8)?;
    let op = EnergyOperator::new(d, EnergyParams::exact(2.0)?, regime)?;
    let (_, residual) = quotient_and_residual(&op, &extremal);
    Ok(EigenResult {
        lambda,
        mu: lambda,
        extremal,
        iterations: 0,
        residual,
    })
}
