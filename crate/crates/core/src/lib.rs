//! Invariant measures, correctors and homogenized coefficients for
//! non-divergence advection-diffusion operators
//! `-a_ij d_ij u + b_j d_j u` whose coefficients are periodic plus a
//! localized defect.
//!
//! The pipeline runs bottom-up:
//!
//! * [`fields`]: grids, discrete calculus, norms and decay diagnostics;
//! * [`coefficients`]: closed-form coefficient families and assumption checks;
//! * [`operators`]: box and torus stencils, Dirichlet and bordered solvers, tiling;
//! * [`cell`]: periodic invariant measure, correctors, skew potential and `A*`;
//! * [`defect`]: truncated-box solves for the defect perturbations;
//! * [`divform`]: the divergence-form rewrite `-div(𝒜∇u) = m L u`;
//! * [`multiscale`]: ε-problems, homogenized limits and rate fits;
//! * [`oracle1d`]: closed-form one-dimensional and gradient-field references.

pub mod cell;
pub mod coefficients;
pub mod defect;
pub mod divform;
pub mod error;
pub mod fields;
pub mod multiscale;
pub mod numerics;
pub mod operators;
pub mod oracle1d;

pub use error::{Error, Result};

/// Library version, recorded in run manifests and cache keys.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
