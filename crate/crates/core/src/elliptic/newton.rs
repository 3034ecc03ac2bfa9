//! Damped Newton iteration for smooth convex objectives with a banded Hessian.
//!
//! Steps solve `H d = -g` by Cholesky, with a growing diagonal shift when the
//! factorization fails (the Neumann energy is flat along constants). A step
//! is accepted under the Armijo test or, once objective differences drop
//! below rounding, when it still reduces the gradient norm.

use super::ncg::{dot, norm, Minimum, Objective};
use super::SolverConfig;

/// Iteration cap; a healthy solve takes a few dozen steps.
const MAX_STEPS: usize = 500;
const STALL_STEPS: usize = 8;

pub(crate) struct Stalled {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub initial_grad_norm: f64,
}

pub(crate) fn minimize<O: Objective>(
    obj: &O,
    x0: Vec<f64>,
    cfg: &SolverConfig,
    abs_floor: f64,
) -> Result<Minimum, Stalled> {
    let n = obj.len();
    let mut x = x0;
    let mut grad = vec![0.0; n];
    let mut value = obj.value_and_gradient(&x, &mut grad);
    let g0 = norm(&grad);
    let target = (cfg.grad_tol * g0).max(abs_floor);
    let mut gnorm = g0;
    // rounding floor detection: the best gradient norm must halve every few steps
    let (mut best, mut idle) = (g0, 0);
    let stalled = |x: Vec<f64>, iterations| Stalled {
        x,
        iterations,
        initial_grad_norm: g0,
    };
    if !g0.is_finite() {
        return Err(stalled(x, 0));
    }

    for iter in 0..cfg.max_iters.min(MAX_STEPS) {
        if gnorm <= target {
            return Ok(Minimum {
                x,
                iterations: iter,
                grad_norm: gnorm,
                initial_grad_norm: g0,
            });
        }
        let Some(h) = obj.hessian(&x) else {
            return Err(stalled(x, iter));
        };
        let top = h.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut factor = h.cholesky();
        let mut shift = 1e-14 * top;
        while factor.is_none() && shift > 0.0 && shift < top {
            let mut shifted = h.clone();
            shifted.add_diagonal(&vec![shift; n]);
            factor = shifted.cholesky();
            shift *= 100.0;
        }
        let Some(l) = factor else {
            return Err(stalled(x, iter));
        };
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        let dir = l.cholesky_solve(&neg);
        let slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            return Err(stalled(x, iter));
        }

        let tiny = 1e-12 * value.abs();
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xt: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + alpha * b).collect();
            let mut gt = vec![0.0; n];
            let vt = obj.value_and_gradient(&xt, &mut gt);
            if vt.is_finite() {
                let armijo = vt <= value + cfg.sufficient_decrease * alpha * slope;
                let gt_norm = norm(&gt);
                if armijo || (vt <= value + tiny && gt_norm < gnorm) {
                    accepted = Some((xt, gt, vt, gt_norm));
                    break;
                }
            }
            alpha *= cfg.shrink;
        }
        let Some((xt, gt, vt, gt_norm)) = accepted else {
            return Err(stalled(x, iter));
        };
        x = xt;
        grad = gt;
        value = vt;
        gnorm = gt_norm;
        if gnorm < 0.5 * best {
            best = gnorm;
            idle = 0;
        } else {
            idle += 1;
            if idle >= STALL_STEPS && gnorm > target {
                return Err(stalled(x, iter + 1));
            }
        }
    }
    if gnorm <= target {
        let iterations = cfg.max_iters.min(MAX_STEPS);
        return Ok(Minimum {
            x,
            iterations,
            grad_norm: gnorm,
            initial_grad_norm: g0,
        });
    }
    let iterations = cfg.max_iters.min(MAX_STEPS);
    Err(stalled(x, iterations))
}
