//! Linear algebra, transforms and quadrature used by the solvers.

pub mod banded;
pub mod dst;
pub mod fft;
pub mod fit;
pub mod krylov;
pub mod quadrature;
pub mod roots;
pub mod spectral;
pub mod stencil;
