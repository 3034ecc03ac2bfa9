//! Convex discrete energies and their exact gradients.
//!
//! The local regimes share the energy
//! `E(u) = (1/p) sum_cells h^n ((|grad_h u|^2 + eps^2)^(p/2) - eps^p)`
//! built from per-cell forward-difference gradient vectors. Dirichlet cells
//! extend the field by zero; Neumann and Robin cells only difference pairs of
//! interior nodes, so no flux is imposed at the boundary. Robin adds
//! `(beta/p) sum_b h^(n-1) ((u_b^2 + eps^2)^(p/2) - eps^p)` over the boundary
//! nodes. The fractional regime delegates to [`FractionalKernel`].
//!
//! The gradient returned by [`energy_gradient`] is a density: `dE/du_i`
//! divided by the node weight, so that it approximates `-Delta_p u` pointwise.
//! All sums run serially in node/cell order.

use std::fmt;
use std::sync::Arc;

use crate::domain::{Cell, Domain, DomainKind, Field};
use crate::elliptic::banded::Banded;
use crate::error::{Error, Result};
use crate::fractional::FractionalKernel;

/// Odd power map `z -> |z|^(p-2) z`, with `jp(0) = 0`.
#[inline]
pub fn jp(z: f64, p: f64) -> f64 {
    if z == 0.0 {
        0.0
    } else if p == 2.0 {
        z
    } else {
        z.abs().powf(p - 2.0) * z
    }
}

pub fn jp_field(u: &[f64], p: f64) -> Field {
    u.iter().map(|&z| jp(z, p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryRegime {
    Dirichlet,
    Robin { beta: f64 },
    Neumann,
    FractionalDirichlet { s: f64 },
}

impl BoundaryRegime {
    pub fn robin(beta: f64) -> Result<Self> {
        let r = BoundaryRegime::Robin { beta };
        r.validate()?;
        Ok(r)
    }

    pub fn fractional(s: f64) -> Result<Self> {
        let r = BoundaryRegime::FractionalDirichlet { s };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BoundaryRegime::Robin { beta } if !(beta > 0.0 && beta.is_finite()) => Err(Error::InvalidParameter(
                format!("Robin coefficient must be positive, got {beta}"),
            )),
            BoundaryRegime::FractionalDirichlet { s } if !(s > 0.0 && s < 1.0) => Err(Error::InvalidParameter(
                format!("fractional order must lie in (0,1), got {s}"),
            )),
            _ => Ok(()),
        }
    }

    /// Checks that this regime can be posed on `d`.
    pub fn check_domain(&self, d: &Domain) -> Result<()> {
        self.validate()?;
        match (self, d.kind()) {
            (BoundaryRegime::Robin { .. }, DomainKind::Masked) => Err(Error::UnsupportedRegime(
                "Robin needs an interval or rectangle domain".into(),
            )),
            (BoundaryRegime::FractionalDirichlet { .. }, kind) if kind != DomainKind::Interval => Err(
                Error::UnsupportedRegime(format!("fractional regime needs an interval domain, got {kind}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn is_neumann(&self) -> bool {
        matches!(self, BoundaryRegime::Neumann)
    }

    /// Regimes whose ground states keep one sign.
    pub fn single_signed(&self) -> bool {
        !self.is_neumann()
    }

    pub fn name(&self) -> &'static str {
        match self {
            BoundaryRegime::Dirichlet => "dirichlet",
            BoundaryRegime::Robin { .. } => "robin",
            BoundaryRegime::Neumann => "neumann",
            BoundaryRegime::FractionalDirichlet { .. } => "fractional",
        }
    }
}

impl fmt::Display for BoundaryRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryRegime::Robin { beta } => write!(f, "robin(beta={beta})"),
            BoundaryRegime::FractionalDirichlet { s } => write!(f, "fractional(s={s})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParams {
    p: f64,
    q: f64,
    epsilon: f64,
}

impl EnergyParams {
    pub fn new(p: f64, epsilon: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::InvalidParameter(format!("p must lie in (1, inf), got {p}")));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "regularization must be nonnegative, got {epsilon}"
            )));
        }
        if epsilon == 0.0 && p < 2.0 {
            return Err(Error::InvalidParameter(format!(
                "p = {p} < 2 needs a positive regularization"
            )));
        }
        Ok(Self {
            p,
            q: p / (p - 1.0),
            epsilon,
        })
    }

    /// Unregularized parameters for *evaluating* energies and quotients.
    ///
    /// Allowed for every `p > 1`; only minimizers need `eps > 0` when `p < 2`.
    pub fn exact(p: f64) -> Result<Self> {
        let mut params = Self::new(p, 1.0)?;
        params.epsilon = 0.0;
        Ok(params)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Conjugate exponent `p/(p-1)`.
    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub(crate) fn with_epsilon_unchecked(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }
}

/// An energy bound to a domain and regime, ready for repeated evaluation.
///
/// Building it validates the regime against the domain and, for the
/// fractional regime, assembles the kernel once.
#[derive(Debug, Clone)]
pub struct EnergyOperator<'a> {
    domain: &'a Domain,
    params: EnergyParams,
    regime: BoundaryRegime,
    kernel: Option<Arc<FractionalKernel>>,
}

impl<'a> EnergyOperator<'a> {
    pub fn new(domain: &'a Domain, params: EnergyParams, regime: BoundaryRegime) -> Result<Self> {
        regime.check_domain(domain)?;
        let kernel = match regime {
            BoundaryRegime::FractionalDirichlet { s } => {
                Some(Arc::new(FractionalKernel::build(domain, s, params.p())?))
            }
            _ => None,
        };
        Ok(Self {
            domain,
            params,
            regime,
            kernel,
        })
    }

    pub fn domain(&self) -> &'a Domain {
        self.domain
    }

    pub fn params(&self) -> EnergyParams {
        self.params
    }

    pub fn regime(&self) -> BoundaryRegime {
        self.regime
    }

    pub fn kernel(&self) -> Option<&FractionalKernel> {
        self.kernel.as_deref()
    }

    /// Same operator with a different regularization length; shares the kernel.
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            params: self.params.with_epsilon_unchecked(epsilon),
            ..self.clone()
        }
    }

    fn cells(&self) -> &'a [Cell] {
        match self.regime {
            BoundaryRegime::Dirichlet => self.domain.dirichlet_cells(),
            _ => self.domain.natural_cells(),
        }
    }

    pub fn energy(&self, u: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), self.domain.len());
        let eps = self.params.epsilon;
        if let Some(k) = &self.kernel {
            return k.energy(u, eps);
        }
        let p = self.params.p;
        let penalty = Penalty::new(p, eps);
        let (hx, hy) = (self.domain.hx(), self.domain.hy());
        let val = |i: Option<usize>| i.map_or(0.0, |i| u[i]);

        let mut sum = 0.0;
        for c in self.cells() {
            let here = val(c.here);
            let mut m = 0.0;
            if c.x {
                let dx = (val(c.east) - here) / hx;
                m += dx * dx;
            }
            if c.y {
                let dy = (val(c.north) - here) / hy;
                m += dy * dy;
            }
            sum += penalty.value(m);
        }
        let mut e = self.domain.volume_weight() * sum / p;
        if let BoundaryRegime::Robin { beta } = self.regime {
            let trace: f64 = self
                .domain
                .boundary_nodes()
                .iter()
                .map(|&(i, w)| w * penalty.value(u[i] * u[i]))
                .sum();
            e += beta * trace / p;
        }
        e
    }

    /// Writes the raw partial derivatives `dE/du_i` into `grad` and returns `E(u)`.
    pub fn energy_and_gradient(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(u.len(), self.domain.len());
        debug_assert_eq!(grad.len(), self.domain.len());
        let eps = self.params.epsilon;
        if let Some(k) = &self.kernel {
            return k.energy_and_gradient(u, eps, grad);
        }
        let p = self.params.p;
        let penalty = Penalty::new(p, eps);
        let (hx, hy) = (self.domain.hx(), self.domain.hy());
        let vol = self.domain.volume_weight();
        let (cx, cy) = (vol / (hx * hx), vol / (hy * hy));
        let val = |i: Option<usize>| i.map_or(0.0, |i| u[i]);

        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut sum = 0.0;
        for c in self.cells() {
            let here = val(c.here);
            let jx = if c.x { val(c.east) - here } else { 0.0 };
            let jy = if c.y { val(c.north) - here } else { 0.0 };
            let (dx, dy) = (jx / hx, jy / hy);
            let (v, factor) = penalty.value_and_factor(dx * dx + dy * dy);
            sum += v;
            if factor == 0.0 {
                continue;
            }
            if c.x {
                let flux = factor * jx * cx;
                if let Some(e) = c.east {
                    grad[e] += flux;
                }
                if let Some(h) = c.here {
                    grad[h] -= flux;
                }
            }
            if c.y {
                let flux = factor * jy * cy;
                if let Some(n) = c.north {
                    grad[n] += flux;
                }
                if let Some(h) = c.here {
                    grad[h] -= flux;
                }
            }
        }
        let mut e = vol * sum / p;
        if let BoundaryRegime::Robin { beta } = self.regime {
            let mut trace = 0.0;
            for &(i, w) in self.domain.boundary_nodes() {
                let (v, factor) = penalty.value_and_factor(u[i] * u[i]);
                trace += w * v;
                grad[i] += beta * w * factor * u[i];
            }
            e += beta * trace / p;
        }
        e
    }

    /// Diagonal of the Hessian of `E` (raw, not divided by `h^n`).
    pub(crate) fn hessian_diagonal(&self, u: &[f64], out: &mut [f64]) {
        let eps = self.params.epsilon;
        if let Some(k) = &self.kernel {
            k.hessian_diagonal(u, eps, out);
            return;
        }
        let p = self.params.p;
        let penalty = Penalty::new(p, eps);
        let (hx, hy) = (self.domain.hx(), self.domain.hy());
        let vol = self.domain.volume_weight();
        let (cx, cy) = (vol / (hx * hx), vol / (hy * hy));
        let val = |i: Option<usize>| i.map_or(0.0, |i| u[i]);

        out.iter_mut().for_each(|g| *g = 0.0);
        for c in self.cells() {
            let here = val(c.here);
            let dx = if c.x { (val(c.east) - here) / hx } else { 0.0 };
            let dy = if c.y { (val(c.north) - here) / hy } else { 0.0 };
            let m = dx * dx + dy * dy;
            if c.x {
                let k = cx * penalty.curvature(m, dx * dx);
                for i in [c.east, c.here].into_iter().flatten() {
                    out[i] += k;
                }
            }
            if c.y {
                let k = cy * penalty.curvature(m, dy * dy);
                for i in [c.north, c.here].into_iter().flatten() {
                    out[i] += k;
                }
            }
            if let (true, true, Some(h)) = (c.x, c.y, c.here) {
                if p != 2.0 {
                    out[h] += 2.0 * vol * penalty.cross(m) * dx * dy / (hx * hy);
                }
            }
        }
        if let BoundaryRegime::Robin { beta } = self.regime {
            for &(i, w) in self.domain.boundary_nodes() {
                out[i] += beta * w * penalty.curvature(u[i] * u[i], u[i] * u[i]);
            }
        }
    }

    /// Hessian of `E` (raw, not divided by `h^n`) in banded form.
    pub(crate) fn hessian(&self, u: &[f64]) -> Banded {
        let eps = self.params.epsilon;
        if let Some(k) = &self.kernel {
            return k.hessian(u, eps);
        }
        let p = self.params.p;
        let penalty = Penalty::new(p, eps);
        let (hx, hy) = (self.domain.hx(), self.domain.hy());
        let vol = self.domain.volume_weight();
        let (cx, cy) = (vol / (hx * hx), vol / (hy * hy));
        let val = |i: Option<usize>| i.map_or(0.0, |i| u[i]);

        let mut bw = 0;
        for c in self.cells() {
            let nodes = [c.here, c.east, c.north];
            for a in nodes.iter().flatten() {
                for b in nodes.iter().flatten() {
                    bw = bw.max(a.abs_diff(*b));
                }
            }
        }
        let mut h = Banded::zeros(u.len(), bw);
        // adds c a b^T, lower triangle only
        let outer = |h: &mut Banded, a: &[(Option<usize>, f64)], b: &[(Option<usize>, f64)], c: f64| {
            for &(i, ai) in a {
                for &(j, bj) in b {
                    if let (Some(i), Some(j)) = (i, j) {
                        if i >= j {
                            h.add(i, j, c * ai * bj);
                        }
                    }
                }
            }
        };
        for c in self.cells() {
            let here = val(c.here);
            let dx = if c.x { (val(c.east) - here) / hx } else { 0.0 };
            let dy = if c.y { (val(c.north) - here) / hy } else { 0.0 };
            let m = dx * dx + dy * dy;
            let bx = [(c.east, 1.0), (c.here, -1.0)];
            let by = [(c.north, 1.0), (c.here, -1.0)];
            if c.x {
                outer(&mut h, &bx, &bx, cx * penalty.curvature(m, dx * dx));
            }
            if c.y {
                outer(&mut h, &by, &by, cy * penalty.curvature(m, dy * dy));
            }
            if c.x && c.y && p != 2.0 {
                let cross = vol * penalty.cross(m) * dx * dy / (hx * hy);
                if cross != 0.0 {
                    outer(&mut h, &bx, &by, cross);
                    outer(&mut h, &by, &bx, cross);
                }
            }
        }
        if let BoundaryRegime::Robin { beta } = self.regime {
            for &(i, w) in self.domain.boundary_nodes() {
                h.add(i, i, beta * w * penalty.curvature(u[i] * u[i], u[i] * u[i]));
            }
        }
        h
    }

    /// `dE/du_i / h^n`.
    pub fn density_gradient(&self, u: &[f64]) -> Field {
        let mut g = vec![0.0; u.len()];
        self.energy_and_gradient(u, &mut g);
        let vol = self.domain.volume_weight();
        g.iter_mut().for_each(|v| *v /= vol);
        g
    }
}

/// `m -> (m + eps^2)^(p/2) - eps^p` and its derivative factor
/// `(m + eps^2)^((p-2)/2)` (so that d/dz of `value(z^2)/p` is `factor * z`).
#[derive(Debug, Clone, Copy)]
struct Penalty {
    p: f64,
    eps2: f64,
    eps_p: f64,
}

impl Penalty {
    fn new(p: f64, eps: f64) -> Self {
        Self {
            p,
            eps2: eps * eps,
            eps_p: if eps == 0.0 { 0.0 } else { eps.powf(p) },
        }
    }

    #[inline]
    fn value(&self, m: f64) -> f64 {
        if self.p == 2.0 || m == 0.0 {
            return m;
        }
        (m + self.eps2).powf(0.5 * self.p) - self.eps_p
    }

    /// Second derivative of `value(m)/p` along one component `z` of the
    /// difference vector, `z^2` of the total `m`.
    #[inline]
    fn curvature(&self, m: f64, z2: f64) -> f64 {
        if self.p == 2.0 {
            return 1.0;
        }
        let a = m + self.eps2;
        if a == 0.0 {
            return if self.p > 2.0 { 0.0 } else { f64::INFINITY };
        }
        a.powf(0.5 * self.p - 1.0) * (1.0 + (self.p - 2.0) * z2 / a)
    }

    /// Mixed second derivative of `value(m)/p` over two components, divided
    /// by their product.
    #[inline]
    fn cross(&self, m: f64) -> f64 {
        let a = m + self.eps2;
        if a == 0.0 {
            return 0.0;
        }
        (self.p - 2.0) * a.powf(0.5 * self.p - 2.0)
    }

    #[inline]
    fn value_and_factor(&self, m: f64) -> (f64, f64) {
        if self.p == 2.0 {
            return (m, 1.0);
        }
        let a = m + self.eps2;
        if a == 0.0 {
            return (0.0, 0.0);
        }
        let pw = a.powf(0.5 * self.p);
        let v = if m == 0.0 { 0.0 } else { pw - self.eps_p };
        (v, pw / a)
    }
}

pub fn energy(d: &Domain, u: &[f64], params: EnergyParams, regime: BoundaryRegime) -> Result<f64> {
    d.check_field(u)?;
    Ok(EnergyOperator::new(d, params, regime)?.energy(u))
}

/// Gradient density; approximates `-Delta_p u` (or the Robin / Neumann /
/// fractional counterpart) at each interior node.
pub fn energy_gradient(d: &Domain, u: &[f64], params: EnergyParams, regime: BoundaryRegime) -> Result<Field> {
    d.check_field(u)?;
    Ok(EnergyOperator::new(d, params, regime)?.density_gradient(u))
}

/// `sum_b h^(n-1) |u_b|^p` over the boundary node list.
pub fn trace_lp(d: &Domain, u: &[f64], p: f64) -> Result<f64> {
    d.check_field(u)?;
    if d.kind() == DomainKind::Masked {
        return Err(Error::UnsupportedRegime("masked domains carry no trace".into()));
    }
    Ok(d.boundary_nodes().iter().map(|&(i, w)| w * u[i].abs().powf(p)).sum())
}
