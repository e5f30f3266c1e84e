//! Correlation kernels: the finite-degree Weyl autocorrelation and the two
//! stationary limits.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::series::{alternating_log, log_partial_exp, SignedLog};

/// Default cap on discretized grid size; Cholesky is cubic in this.
pub const DEFAULT_MATRIX_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KernelSpec {
    /// Correlation of the degree-`n` Weyl polynomial `sum a_i x^i / sqrt(i!)`.
    WeylFinite { n: u64 },
    /// `exp(-t^2 / 2)`.
    GaussLimit,
    /// `1 / cosh(t / 2)`.
    Sech,
}

impl KernelSpec {
    pub fn is_stationary(&self) -> bool {
        !matches!(self, KernelSpec::WeylFinite { .. })
    }

    pub fn name(&self) -> String {
        match self {
            KernelSpec::WeylFinite { n } => format!("weyl{n}"),
            KernelSpec::GaussLimit => "gauss".to_string(),
            KernelSpec::Sech => "sech".to_string(),
        }
    }

    /// Log-correlation of a stationary kernel at lag `t`.
    fn stationary_log(&self, t: f64) -> f64 {
        let t = t.abs();
        match self {
            KernelSpec::GaussLimit => -0.5 * t * t,
            // -log cosh(t/2) = -t/2 - log((1 + e^{-t}) / 2)
            KernelSpec::Sech => -0.5 * t - (-t).exp().ln_1p() + std::f64::consts::LN_2,
            KernelSpec::WeylFinite { .. } => unreachable!("not stationary"),
        }
    }
}

/// `log sum_{i<=n} x^{2i} / i!`, the log-variance of the Weyl polynomial at `x`.
pub fn weyl_log_variance(n: u64, x: f64) -> f64 {
    log_partial_exp(n, x * x).log_magnitude
}

/// Numerator `sum_{i<=n} (xy)^i / i!` of the Weyl correlation in signed-log form.
pub fn weyl_log_covariance(n: u64, x: f64, y: f64) -> Result<SignedLog> {
    let product = x * y;
    if product >= 0.0 {
        Ok(SignedLog::positive(log_partial_exp(n, product).log_magnitude))
    } else {
        alternating_log(n, -product).map(|(s, _)| s)
    }
}

/// Signed log of `corr(kernel, x, y)`; needed wherever the correlation
/// underflows.
pub fn log_corr(kernel: KernelSpec, x: f64, y: f64) -> Result<SignedLog> {
    if x == y {
        return Ok(SignedLog::positive(0.0));
    }
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    match kernel {
        KernelSpec::WeylFinite { n } => {
            let numerator = weyl_log_covariance(n, lo, hi)?;
            let log_den = 0.5 * weyl_log_variance(n, lo) + 0.5 * weyl_log_variance(n, hi);
            Ok(numerator.scale_exp(-log_den))
        }
        stationary => Ok(SignedLog::positive(stationary.stationary_log(hi - lo))),
    }
}

/// Correlation of the process at `x` and `y`; exactly 1 on the diagonal.
pub fn corr(kernel: KernelSpec, x: f64, y: f64) -> Result<f64> {
    log_corr(kernel, x, y).map(|s| s.value().clamp(-1.0, 1.0))
}

/// `|A_n(x, y) - exp(-(x - y)^2 / 2)|`.
pub fn limit_gap(n: u64, x: f64, y: f64) -> Result<f64> {
    let weyl = corr(KernelSpec::WeylFinite { n }, x, y)?;
    let limit = corr(KernelSpec::GaussLimit, x, y)?;
    Ok((weyl - limit).abs())
}

/// Correlation matrix of the kernel over the grid points, capped at
/// [`DEFAULT_MATRIX_CAP`] points.
pub fn build_corr_matrix(kernel: KernelSpec, grid: &GridSpec) -> Result<DMatrix<f64>> {
    build_corr_matrix_with_cap(kernel, grid, DEFAULT_MATRIX_CAP)
}

pub fn build_corr_matrix_with_cap(kernel: KernelSpec, grid: &GridSpec, cap: usize) -> Result<DMatrix<f64>> {
    let len = grid.len();
    if len > cap {
        return Err(Error::GridTooLarge { points: len, cap });
    }
    let points = grid.points();
    let mut m = DMatrix::<f64>::identity(len, len);
    match kernel {
        KernelSpec::WeylFinite { n } => {
            let log_var: Vec<f64> = points.iter().map(|&x| weyl_log_variance(n, x)).collect();
            for i in 0..len {
                for j in (i + 1)..len {
                    let num = weyl_log_covariance(n, points[i], points[j])?;
                    let value = num.scale_exp(-0.5 * log_var[i] - 0.5 * log_var[j]).value().clamp(-1.0, 1.0);
                    m[(i, j)] = value;
                    m[(j, i)] = value;
                }
            }
        }
        stationary => {
            // Uniform grid: entries depend only on the lag index.
            let by_lag: Vec<f64> = (0..len)
                .map(|k| if k == 0 { 1.0 } else { stationary.stationary_log(k as f64 * grid.step).exp() })
                .collect();
            for i in 0..len {
                for j in (i + 1)..len {
                    m[(i, j)] = by_lag[j - i];
                    m[(j, i)] = by_lag[j - i];
                }
            }
        }
    }
    Ok(m)
}
