//! Persistence probabilities of random Weyl polynomials and of the
//! stationary Gaussian processes they converge to.
//!
//! - [`series`]: log-domain truncated exponential sums and Poisson tails.
//! - [`kernels`]: correlation functions and correlation matrices.
//! - [`sampler`]: reproducible sample paths and survival counts.
//! - [`persistence`]: probability estimates, exponent fits and sweeps.
//! - [`bounds`]: numerical checks of the analytic inequalities.

pub mod bounds;
pub mod error;
pub mod grid;
pub mod kernels;
pub mod persistence;
pub mod sampler;
pub mod series;

pub use error::{Error, Result};
pub use grid::GridSpec;
pub use kernels::KernelSpec;
pub use sampler::{RngStream, SampleOptions, WeylModel};
