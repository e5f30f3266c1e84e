use thiserror::Error;

/// Errors raised by the numerical and sampling layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An alternating series could not be certified to six significant digits.
    ///
    /// `lower` and `upper` bracket the true value of the series using the
    /// analytic remainder bound `|1 - e^z S| <= e^{2z} z^{n+1} / (n+1)!`.
    #[error("precision loss evaluating alternating series (n = {n}, z = {z}); value lies in [{lower}, {upper}]")]
    PrecisionLoss { n: u64, z: f64, lower: f64, upper: f64 },

    #[error("grid has {points} points, above the cap of {cap}; coarsen the step or shorten the interval")]
    GridTooLarge { points: usize, cap: usize },

    #[error(
        "Cholesky factorization failed even with diagonal jitter {jitter:e}; the grid is too fine for this kernel"
    )]
    FactorizationFailed { jitter: f64 },

    #[error("need at least {needed} estimates with successes > 0 to fit, got {usable}")]
    InsufficientData { usable: usize, needed: usize },

    #[error("degree {n} is odd: an odd-degree polynomial cannot stay positive on the whole line")]
    OddDegreeWholeLine { n: u64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
