//! Wasserstein distances, barycenters and stability diagnostics for discrete
//! measures on a ball in `R^d`.
//!
//! The crate is organised by layer:
//!
//! - [`measures`]: atomic probability measures, grids and populations of measures.
//! - [`ot`]: exact and entropic optimal transport, potentials and conjugates.
//! - [`barycenter`]: barycenter solvers (1D quantiles, fixed support, free support, penalized).
//! - [`functionals`]: variance functional, Kantorovich functional, strong-convexity gaps and
//!   the graph-Laplacian constants for unions of convex sets.
//! - [`metrics`]: nested `W1` and total variation between populations, exponent fits.
//! - [`experiments`]: generators for the counterexample families and the sweeps built on them.

pub mod error;
pub mod format;
pub mod measures;
pub mod ot;
pub mod barycenter;
pub mod functionals;
pub mod metrics;
pub mod experiments;

pub use error::{Error, Result};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
