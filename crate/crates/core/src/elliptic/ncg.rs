//! Polak-Ribiere nonlinear conjugate gradients for smooth convex objectives.
//!
//! The line search seeds its trial step from the previous iteration, refines
//! it with a few secant updates on the directional derivative and then
//! backtracks until a sufficient-decrease test holds. Near convergence,
//! objective differences drop below rounding, so a step is also accepted
//! under the approximate Wolfe test (value within `1e-12` relative of the
//! start and slope reduced by `1 - 2 c1`).

use crate::error::{Error, Result};

use super::banded::Banded;
use super::SolverConfig;

const PRECONDITIONED_PERIOD: usize = 50;

pub(crate) trait Objective {
    fn len(&self) -> usize;

    /// Writes the gradient into `grad` and returns the value.
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Positive diagonal scaling (an approximate Hessian diagonal) used as a
    /// preconditioner. Returns `false` when the objective offers none.
    fn diagonal(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// Full Hessian for Newton steps, when the objective can assemble one.
    fn hessian(&self, _x: &[f64]) -> Option<Banded> {
        None
    }
}

/// Sanitized diagonal scaling at `x`, or `None` when the objective has none.
fn scaling<O: Objective>(obj: &O, x: &[f64]) -> Option<Vec<f64>> {
    let mut diag = vec![0.0; x.len()];
    if !obj.diagonal(x, &mut diag) {
        return None;
    }
    let top = diag.iter().filter(|v| v.is_finite()).fold(0.0f64, |m, &v| m.max(v));
    if !(top > 0.0) {
        return None;
    }
    let floor = 1e-12 * top;
    for d in diag.iter_mut() {
        *d = if d.is_finite() { d.max(floor) } else { top };
    }
    Some(diag)
}

fn apply(scale: &Option<Vec<f64>>, g: &[f64]) -> Vec<f64> {
    match scale {
        Some(d) => g.iter().zip(d).map(|(gi, di)| gi / di).collect(),
        None => g.to_vec(),
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub initial_grad_norm: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Probe {
    alpha: f64,
    value: f64,
    slope: f64,
    x: Vec<f64>,
    grad: Vec<f64>,
}

/// Minimizes `obj` from `x0`, stopping once the gradient norm falls to
/// `cfg.grad_tol` times its initial value or below `abs_floor`.
pub(crate) fn minimize<O: Objective>(obj: &O, x0: Vec<f64>, cfg: &SolverConfig, abs_floor: f64) -> Result<Minimum> {
    let n = obj.len();
    let mut x = x0;
    let mut grad = vec![0.0; n];
    let mut value = obj.value_and_gradient(&x, &mut grad);
    let g0 = norm(&grad);
    let target = (cfg.grad_tol * g0).max(abs_floor);
    if g0 <= target {
        return Ok(Minimum {
            x,
            iterations: 0,
            grad_norm: g0,
            initial_grad_norm: g0,
        });
    }

    // the scaling is frozen between restarts so the directions stay conjugate
    let mut scale = scaling(obj, &x);
    let period = if scale.is_some() {
        cfg.restart_period.min(PRECONDITIONED_PERIOD)
    } else {
        cfg.restart_period
    };
    let mut z = apply(&scale, &grad);
    let mut dir: Vec<f64> = z.iter().map(|g| -g).collect();
    // unit step for a diagonally scaled direction, 1/|g| otherwise
    let mut prev_step = if scale.is_some() { 1.0 } else { 1.0 / g0 };
    let mut prev_slope = dot(&grad, &dir);
    let mut since_restart = 0;
    let mut gnorm = g0;

    for iter in 1..=cfg.max_iters {
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            dir.iter_mut().zip(&z).for_each(|(d, g)| *d = -g);
            slope = -dot(&grad, &z);
            since_restart = 0;
        }
        let guess = (prev_step * prev_slope / slope).abs();
        let probe = match line_search(obj, &x, value, slope, &dir, guess, cfg) {
            Some(p) => p,
            None => {
                // stagnation along the conjugate direction: one steepest-descent try
                dir.iter_mut().zip(&grad).for_each(|(d, g)| *d = -g);
                slope = -gnorm * gnorm;
                prev_step = 1.0 / gnorm;
                since_restart = 0;
                match line_search(obj, &x, value, slope, &dir, prev_step, cfg) {
                    Some(p) => p,
                    None => {
                        return Err(Error::NonConvergence {
                            iterations: iter,
                            residual: gnorm / g0,
                            last: x,
                        })
                    }
                }
            }
        };

        prev_step = probe.alpha;
        prev_slope = slope;
        let new_grad = probe.grad;
        x = probe.x;
        value = probe.value;
        gnorm = norm(&new_grad);
        if gnorm <= target {
            return Ok(Minimum {
                x,
                iterations: iter,
                grad_norm: gnorm,
                initial_grad_norm: g0,
            });
        }

        since_restart += 1;
        let restart = since_restart >= period;
        if restart && scale.is_some() {
            scale = scaling(obj, &x);
            z = apply(&scale, &grad);
        }
        let new_z = apply(&scale, &new_grad);
        let beta = if restart {
            since_restart = 0;
            0.0
        } else {
            // preconditioned Polak-Ribiere, clipped at zero
            let yz: f64 = new_grad
                .iter()
                .zip(new_z.iter().zip(&z))
                .map(|(gn, (zn, zo))| gn * (zn - zo))
                .sum();
            (yz / dot(&grad, &z)).max(0.0)
        };
        grad = new_grad;
        z = new_z;
        dir.iter_mut().zip(&z).for_each(|(d, g)| *d = -g + beta * *d);
    }

    Err(Error::NonConvergence {
        iterations: cfg.max_iters,
        residual: gnorm / g0,
        last: x,
    })
}

fn line_search<O: Objective>(
    obj: &O,
    x: &[f64],
    value: f64,
    slope: f64,
    dir: &[f64],
    guess: f64,
    cfg: &SolverConfig,
) -> Option<Probe> {
    let n = x.len();
    let eval = |alpha: f64| -> Probe {
        let xt: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + alpha * di).collect();
        let mut g = vec![0.0; n];
        let v = obj.value_and_gradient(&xt, &mut g);
        Probe {
            alpha,
            value: v,
            slope: dot(&g, dir),
            x: xt,
            grad: g,
        }
    };

    let guess = if guess.is_finite() && guess > 0.0 { guess } else { 1.0 };
    let mut probe = eval(guess);

    // secant refinement on the directional derivative
    let (mut lo_a, mut lo_s) = (0.0, slope);
    let mut hi: Option<(f64, f64)> = None;
    for _ in 0..4 {
        if !probe.value.is_finite() {
            break;
        }
        if probe.slope.abs() <= 0.1 * slope.abs() {
            break;
        }
        if probe.slope < 0.0 {
            lo_a = probe.alpha;
            lo_s = probe.slope;
        } else {
            hi = Some((probe.alpha, probe.slope));
        }
        let next = match hi {
            Some((ha, hs)) => {
                let a = lo_a - lo_s * (ha - lo_a) / (hs - lo_s);
                if a > lo_a && a < ha {
                    a
                } else {
                    0.5 * (lo_a + ha)
                }
            }
            None => {
                let (pa, ps) = (0.0, slope);
                if probe.slope > ps {
                    let a = probe.alpha - probe.slope * (probe.alpha - pa) / (probe.slope - ps);
                    a.min(10.0 * probe.alpha)
                } else {
                    4.0 * probe.alpha
                }
            }
        };
        if !(next.is_finite() && next > 0.0) {
            break;
        }
        let candidate = eval(next);
        if candidate.value.is_finite() {
            probe = candidate;
        } else {
            break;
        }
    }

    let tiny = 1e-12 * value.abs();
    for _ in 0..60 {
        if probe.value.is_finite() {
            let armijo = probe.value <= value + cfg.sufficient_decrease * probe.alpha * slope;
            let approx_wolfe =
                probe.value <= value + tiny && probe.slope.abs() <= (1.0 - 2.0 * cfg.sufficient_decrease) * slope.abs();
            if armijo || approx_wolfe {
                return Some(probe);
            }
        }
        let next = probe.alpha * cfg.shrink;
        if next <= f64::MIN_POSITIVE {
            break;
        }
        probe = eval(next);
    }
    None
}
