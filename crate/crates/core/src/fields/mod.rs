//! Grids, fields, discrete calculus and the norm and decay diagnostics used by
//! every other module.

mod calculus;
mod field;
mod grid;
pub mod io;
mod norms;

pub use calculus::{differentiate, differentiate_with_order, mean, DerivKind};
pub use field::{Field, Symmetry};
pub use grid::{BoxGrid, Grid, TorusGrid};
pub use norms::{annular_profile, lq_norm, sublinearity_ratio, Region, Shell, ShellProfile};
