//! Doubly nonlinear (Trudinger-type) flows `d/dt (|v|^(p-2) v) = Delta_p v` on
//! finite-difference grids, and the p-Laplacian ground states they converge to.
//!
//! The crate is organised bottom-up:
//!
//! - [`domain`]: grids, quadrature weights and boundary structure;
//! - [`operators`] and [`fractional`]: convex discrete energies and gradients
//!   for the Dirichlet, Robin, Neumann and fractional regimes;
//! - [`elliptic`]: the minimizer behind implicit steps and inverse solves;
//! - [`flow`]: trajectories of the implicit scheme;
//! - [`diagnostics`]: monotone quantities, dual norms and eigenvalue estimators;
//! - [`oracle`]: independent ground-state computations used as references;
//! - [`cli`]: configuration files and the `dnflow` command implementations.

// `!(x > 0.0)` style guards are how NaN gets rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod domain;
pub mod elliptic;
pub mod error;
pub mod flow;
pub mod fractional;
pub mod operators;
pub mod oracle;
pub mod sampling;

#[cfg(test)]
mod testutil;

pub use domain::{integrate_power, Domain, DomainKind, Field};
pub use elliptic::{implicit_step, inverse_operator, zero_pmean_shift, SolverConfig};
pub use error::{Error, Result};
pub use operators::{energy, energy_gradient, jp, trace_lp, BoundaryRegime, EnergyParams};
