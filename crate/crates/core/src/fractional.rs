//! Dense pair-weight tables for the 1-D fractional energy on `(0, 1)` with
//! zero exterior data.
//!
//! Pairs of interior nodes interact through `w_ij = h^2 / |x_i - x_j|^(1+ps)`.
//! The interaction of node `i` with the exterior `R \ (0,1)`, where the field
//! vanishes, integrates in closed form to `kappa_i = (x_i^-ps + (1-x_i)^-ps) / (ps)`.

use crate::domain::{Domain, DomainKind};
use crate::elliptic::banded::Banded;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FractionalKernel {
    s: f64,
    p: f64,
    h: f64,
    n: usize,
    /// Row-major `n x n`, zero diagonal.
    weights: Vec<f64>,
    exterior: Vec<f64>,
}

impl FractionalKernel {
    pub fn build(d: &Domain, s: f64, p: f64) -> Result<Self> {
        if d.kind() != DomainKind::Interval {
            return Err(Error::UnsupportedRegime(format!(
                "fractional kernel needs an interval domain, got {}",
                d.kind()
            )));
        }
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "fractional order must lie in (0,1), got {s}"
            )));
        }
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::InvalidParameter(format!("exponent must exceed 1, got {p}")));
        }
        let n = d.len();
        let h = d.h();
        let ps = p * s;
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let dist = (d.x(i) - d.x(j)).abs();
                let w = h * h / dist.powf(1.0 + ps);
                weights[i * n + j] = w;
                weights[j * n + i] = w;
            }
        }
        let exterior = (0..n)
            .map(|i| {
                let x = d.x(i);
                (x.powf(-ps) + (1.0 - x).powf(-ps)) / ps
            })
            .collect();
        Ok(Self {
            s,
            p,
            h,
            n,
            weights,
            exterior,
        })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn exterior(&self) -> &[f64] {
        &self.exterior
    }

    /// `(1/p) [ sum_{i != j} w_ij phi(u_i - u_j) + 2 sum_i h kappa_i phi(u_i) ]`
    /// with `phi(z) = (z^2 + eps^2)^(p/2) - eps^p`.
    pub fn energy(&self, u: &[f64], eps: f64) -> f64 {
        let p = self.p;
        let phi = |z: f64| -> f64 {
            if p == 2.0 || z == 0.0 {
                z * z
            } else {
                (z * z + eps * eps).powf(0.5 * p) - eps.powf(p)
            }
        };
        let mut pairs = 0.0;
        for i in 0..self.n {
            let row = &self.weights[i * self.n..(i + 1) * self.n];
            let mut acc = 0.0;
            for j in (i + 1)..self.n {
                acc += row[j] * phi(u[i] - u[j]);
            }
            pairs += acc;
        }
        let tail: f64 = u.iter().zip(&self.exterior).map(|(&ui, &k)| k * phi(ui)).sum();
        (2.0 * pairs + 2.0 * self.h * tail) / p
    }

    /// Writes `dE/du_i` into `grad` and returns the energy.
    pub fn energy_and_gradient(&self, u: &[f64], eps: f64, grad: &mut [f64]) -> f64 {
        let p = self.p;
        let linear = p == 2.0;
        // (phi(z), phi'(z)/p)
        let eval = |z: f64| -> (f64, f64) {
            if linear {
                (z * z, z)
            } else {
                let a = z * z + eps * eps;
                if a == 0.0 {
                    return (0.0, 0.0);
                }
                if z == 0.0 {
                    return (0.0, 0.0);
                }
                let pw = a.powf(0.5 * p);
                (pw - eps.powf(p), z * pw / a)
            }
        };
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut pairs = 0.0;
        for i in 0..self.n {
            let row = &self.weights[i * self.n..(i + 1) * self.n];
            let mut acc = 0.0;
            let mut gi = 0.0;
            for j in (i + 1)..self.n {
                let (v, dv) = eval(u[i] - u[j]);
                acc += row[j] * v;
                let flux = 2.0 * row[j] * dv;
                gi += flux;
                grad[j] -= flux;
            }
            grad[i] += gi;
            pairs += acc;
        }
        let mut tail = 0.0;
        for i in 0..self.n {
            let (v, dv) = eval(u[i]);
            tail += self.exterior[i] * v;
            grad[i] += 2.0 * self.h * self.exterior[i] * dv;
        }
        (2.0 * pairs + 2.0 * self.h * tail) / p
    }

    /// Diagonal of the Hessian of [`Self::energy`].
    pub(crate) fn hessian_diagonal(&self, u: &[f64], eps: f64, out: &mut [f64]) {
        let p = self.p;
        // phi''(z) / p
        let curv = |z: f64| -> f64 {
            if p == 2.0 {
                return 1.0;
            }
            let a = z * z + eps * eps;
            if a == 0.0 {
                return if p > 2.0 { 0.0 } else { f64::INFINITY };
            }
            a.powf(0.5 * p - 1.0) * (1.0 + (p - 2.0) * z * z / a)
        };
        for i in 0..self.n {
            let row = &self.weights[i * self.n..(i + 1) * self.n];
            let mut acc = 2.0 * self.h * self.exterior[i] * curv(u[i]);
            for j in 0..self.n {
                if j != i {
                    acc += 2.0 * row[j] * curv(u[i] - u[j]);
                }
            }
            out[i] = acc;
        }
    }

    /// Full Hessian of [`Self::energy`].
    pub(crate) fn hessian(&self, u: &[f64], eps: f64) -> Banded {
        let p = self.p;
        let curv = |z: f64| -> f64 {
            if p == 2.0 {
                return 1.0;
            }
            let a = z * z + eps * eps;
            if a == 0.0 {
                return if p > 2.0 { 0.0 } else { f64::INFINITY };
            }
            a.powf(0.5 * p - 1.0) * (1.0 + (p - 2.0) * z * z / a)
        };
        let n = self.n;
        let mut h = Banded::zeros(n, n.saturating_sub(1));
        for i in 0..n {
            h.add(i, i, 2.0 * self.h * self.exterior[i] * curv(u[i]));
            for j in 0..i {
                let c = 2.0 * self.weights[i * n + j] * curv(u[i] - u[j]);
                h.add(i, j, -c);
                h.add(i, i, c);
                h.add(j, j, c);
            }
        }
        h
    }

    /// Symmetric matrix `M` with `E(u) = u^T M u / 2` at `p = 2`.
    pub fn linear_matrix(&self) -> Vec<f64> {
        let n = self.n;
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            let mut diag = 2.0 * self.h * self.exterior[i];
            for j in 0..n {
                if i != j {
                    let w = self.weight(i, j);
                    m[i * n + j] = -2.0 * w;
                    diag += 2.0 * w;
                }
            }
            m[i * n + i] = diag;
        }
        m
    }
}
