//! Gaussian approximation of Poisson functionals with values in a Hilbert
//! space: kernels on finite measure grids, chaos moments, contraction and
//! fourth-moment bounds, Monte Carlo checks, and two worked applications.

pub mod besov;
pub mod bounds;
pub mod chaos_algebra;
pub mod combinatorics;
pub mod error;
pub mod measure_kernels;
pub mod poisson_mc;
pub mod quadrature;
pub mod rgg;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
