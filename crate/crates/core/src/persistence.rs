//! Persistence probability estimates, exponent fits and the sweeps that feed
//! them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::kernels::KernelSpec;
use crate::sampler::{PathBatch, RngStream, SampleOptions, StationarySampler, WeylModel, WeylSampler};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Smallest degree accepted by [`sweep_n`], apart from the degenerate `n = 0`.
pub const MIN_SWEEP_DEGREE: u64 = 16;

/// Stream-index tags keeping the sweeps' random streams apart.
const TAG_STATIONARY: u64 = 0x1 << 60;
const TAG_HALF_LINE: u64 = 0x2 << 60;
const TAG_WHOLE_LINE: u64 = 0x3 << 60;
const TAG_DECOMPOSE: u64 = 0x4 << 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceEstimate {
    pub trials: u64,
    pub successes: u64,
    pub p_hat: f64,
    /// `ln p_hat`; `-inf` when nothing survived.
    pub log_p: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// The `T` or `sqrt(n)` this estimate belongs to.
    pub scale: f64,
    pub seed: RngStream,
}

impl PersistenceEstimate {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }
}

/// Wilson score interval at confidence [`Z_95`]; exact at the ends.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z_95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let low = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let high = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    (low.min(p), high.max(p))
}

pub fn estimate(batch: &PathBatch, scale: f64) -> PersistenceEstimate {
    from_counts(batch.survived, batch.trials, scale, batch.stream)
}

/// Estimate from raw counts; `trials` must be positive.
pub fn from_counts(successes: u64, trials: u64, scale: f64, seed: RngStream) -> PersistenceEstimate {
    let p_hat = successes as f64 / trials as f64;
    let (ci_low, ci_high) = wilson_interval(successes, trials);
    PersistenceEstimate {
        trials,
        successes,
        p_hat,
        log_p: if successes == 0 { f64::NEG_INFINITY } else { p_hat.ln() },
        ci_low,
        ci_high,
        scale,
        seed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub scale: f64,
    pub log_p: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
    pub points: Vec<FitPoint>,
}

/// Inverse delta-method variance of `ln p_hat`: `p trials / (1 - p)`. The
/// variance is floored at `1 / trials^2` so that `p_hat = 1` gets a finite
/// weight.
pub fn log_p_weight(estimate: &PersistenceEstimate) -> f64 {
    let n = estimate.trials as f64;
    let p = estimate.p_hat;
    let variance = ((1.0 - p) / (p * n)).max(1.0 / (n * n));
    1.0 / variance
}

/// Weighted least-squares line through `(scale, log_p)` points.
///
/// The slope error is the weighted standard error, inflated by the root
/// reduced chi-square when the scatter exceeds what the weights predict.
pub fn fit_weighted_line(points: &[FitPoint]) -> Result<ExponentFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData { usable: points.len(), needed: 3 });
    }
    if points.iter().any(|p| !(p.weight > 0.0 && p.weight.is_finite()) || !p.log_p.is_finite() || !p.scale.is_finite())
    {
        return Err(Error::InvalidParameter("fit points need finite values and positive finite weights".into()));
    }
    let sw: f64 = points.iter().map(|p| p.weight).sum();
    let mean_x = points.iter().map(|p| p.weight * p.scale).sum::<f64>() / sw;
    let mean_y = points.iter().map(|p| p.weight * p.log_p).sum::<f64>() / sw;
    let sxx: f64 = points.iter().map(|p| p.weight * (p.scale - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| p.weight * (p.scale - mean_x) * (p.log_p - mean_y)).sum();
    let syy: f64 = points.iter().map(|p| p.weight * (p.log_p - mean_y).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidParameter("fit needs at least two distinct scales".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let chi2: f64 = points.iter().map(|p| p.weight * (p.log_p - intercept - slope * p.scale).powi(2)).sum();
    let reduced = chi2 / (points.len() - 2) as f64;
    let slope_stderr = (1.0 / sxx).sqrt() * reduced.sqrt().max(1.0);
    let r_squared = if syy > 0.0 { (1.0 - chi2 / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(ExponentFit { slope, intercept, slope_stderr, r_squared, points: points.to_vec() })
}

/// Fits `log_p` against `scale`, dropping estimates with no successes.
pub fn fit_exponent(estimates: &[PersistenceEstimate]) -> Result<ExponentFit> {
    let points: Vec<FitPoint> = estimates
        .iter()
        .filter(|e| e.successes > 0)
        .map(|e| FitPoint { scale: e.scale, log_p: e.log_p, weight: log_p_weight(e) })
        .collect();
    if points.len() < 3 {
        return Err(Error::InsufficientData { usable: points.len(), needed: 3 });
    }
    fit_weighted_line(&points)
}

fn kernel_tag(kernel: KernelSpec) -> u64 {
    match kernel {
        KernelSpec::GaussLimit => 1 << 56,
        KernelSpec::Sech => 2 << 56,
        KernelSpec::WeylFinite { .. } => 3 << 56,
    }
}

/// One estimate per horizon `T` on the grid `0, step, ..., T`, each on its own
/// stream (keyed by `T`, so the same horizon reproduces across lists).
pub fn sweep_t(
    kernel: KernelSpec,
    t_list: &[f64],
    step: f64,
    trials: u64,
    seed: u64,
    opts: SampleOptions,
) -> Result<Vec<PersistenceEstimate>> {
    t_list
        .iter()
        .map(|&horizon| {
            if !(horizon >= 0.0) {
                return Err(Error::InvalidParameter(format!("horizon must be nonnegative, got {horizon}")));
            }
            let grid = GridSpec::new(0.0, horizon, step)?;
            let stream = RngStream::new(seed, TAG_STATIONARY | kernel_tag(kernel) | (horizon.to_bits() >> 8));
            let batch = StationarySampler::new(kernel, grid)?.sample(trials, stream, opts)?;
            Ok(estimate(&batch, horizon))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `[0, sqrt(n) + 3 alpha_n]`.
    HalfLine,
    /// `[-(sqrt(n) + 3 alpha_n), sqrt(n) + 3 alpha_n]`.
    WholeLine,
}

/// The sampling grid of a degree-`n` sweep point. `n = 0` is the single point
/// `{0}`.
pub fn sweep_grid(side: Side, n: u64, step: f64) -> Result<GridSpec> {
    let model = WeylModel::new(n);
    let end = model.half_line_end();
    match side {
        Side::HalfLine => GridSpec::new(0.0, end, step),
        Side::WholeLine => {
            let k = (end / step + 1e-9).floor();
            GridSpec::new(-k * step, k * step, step)
        }
    }
}

/// One estimate per degree, with `scale = sqrt(n)`. A degree's stream depends
/// only on `(seed, side, n)`, so reruns at another step reuse its randomness.
pub fn sweep_n(
    side: Side,
    n_list: &[u64],
    step: f64,
    trials: u64,
    seed: u64,
    opts: SampleOptions,
) -> Result<Vec<PersistenceEstimate>> {
    n_list
        .iter()
        .map(|&n| {
            if side == Side::WholeLine && n % 2 == 1 {
                return Err(Error::OddDegreeWholeLine { n });
            }
            if n != 0 && n < MIN_SWEEP_DEGREE {
                return Err(Error::InvalidParameter(format!(
                    "degree sweeps need n >= {MIN_SWEEP_DEGREE} (or n = 0), got {n}"
                )));
            }
            let tag = match side {
                Side::HalfLine => TAG_HALF_LINE,
                Side::WholeLine => TAG_WHOLE_LINE,
            };
            let grid = sweep_grid(side, n, step)?;
            let batch =
                WeylSampler::new(WeylModel::new(n), grid)?.sample(trials, RngStream::new(seed, tag | n), opts)?;
            Ok(estimate(&batch, (n as f64).sqrt()))
        })
        .collect()
}

/// Slepian lower-bound consistency: `full >= A B C - 3 h`, with `h` the
/// quadrature sum of the full estimate's half-width and the product's
/// delta-method half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlepianCheck {
    pub full: f64,
    pub product: f64,
    pub combined_half_width: f64,
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub n: u64,
    pub alpha_n: f64,
    /// Whole half-line window `[0, sqrt(n) + 3 alpha_n]`.
    pub full: PersistenceEstimate,
    /// Bulk `[0, sqrt(n) - alpha_n]`.
    pub a: PersistenceEstimate,
    /// Transition `[sqrt(n) - alpha_n, sqrt(n) + alpha_n]`.
    pub b: PersistenceEstimate,
    /// Edge `[sqrt(n) + alpha_n, sqrt(n) + 3 alpha_n]`.
    pub c: PersistenceEstimate,
    pub slepian: SlepianCheck,
}

pub fn slepian_check(full: &PersistenceEstimate, parts: &[&PersistenceEstimate]) -> SlepianCheck {
    let product: f64 = parts.iter().map(|e| e.p_hat).product();
    let relative: f64 =
        if product > 0.0 { parts.iter().map(|e| (e.half_width() / e.p_hat).powi(2)).sum::<f64>().sqrt() } else { 0.0 };
    let product_half_width = product * relative;
    let combined_half_width = full.half_width().hypot(product_half_width);
    let margin = full.p_hat - (product - 3.0 * combined_half_width);
    SlepianCheck { full: full.p_hat, product, combined_half_width, margin, pass: margin >= 0.0 }
}

/// Estimates the half-line persistence probability of the degree-`n` Weyl
/// polynomial and of its three sub-intervals, each on the same lattice and on
/// independent streams.
pub fn product_decomposition(n: u64, step: f64, trials: u64, seed: u64, opts: SampleOptions) -> Result<Decomposition> {
    if n % 2 == 1 {
        return Err(Error::InvalidParameter(format!("decomposition needs even n, got {n}")));
    }
    let model = WeylModel::new(n);
    let root = model.sqrt_n();
    let alpha = model.alpha_n;
    if !(root - alpha > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sqrt(n) - alpha_n = {} is not positive for n = {n}",
            root - alpha
        )));
    }
    let full_grid = sweep_grid(Side::HalfLine, n, step)?;
    let sampler = WeylSampler::new(model, full_grid)?;
    let bounds = [(0.0, root - alpha), (root - alpha, root + alpha), (root + alpha, root + 3.0 * alpha)];
    let run = |grid: GridSpec, part: u64| -> Result<PersistenceEstimate> {
        let stream = RngStream::new(seed, TAG_DECOMPOSE | (part << 48) | n);
        let batch = if grid == full_grid {
            sampler.sample(trials, stream, opts)?
        } else {
            WeylSampler::new(model, grid)?.sample(trials, stream, opts)?
        };
        Ok(estimate(&batch, root))
    };
    let full = run(full_grid, 0)?;
    let mut parts = Vec::with_capacity(3);
    for (k, &(lo, hi)) in bounds.iter().enumerate() {
        let grid = full_grid
            .restrict(lo, hi)
            .ok_or_else(|| Error::InvalidParameter(format!("step {step} leaves no grid point in [{lo}, {hi}]")))?;
        parts.push(run(grid, k as u64 + 1)?);
    }
    let c = parts.pop().expect("three parts");
    let b = parts.pop().expect("three parts");
    let a = parts.pop().expect("three parts");
    let slepian = slepian_check(&full, &[&a, &b, &c]);
    Ok(Decomposition { n, alpha_n: alpha, full, a, b, c, slepian })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn seed() -> RngStream {
        RngStream::new(0, 0)
    }

    #[test]
    fn wilson_examples() {
        let e = from_counts(500_000, 1_000_000, 1.0, seed());
        assert_eq!(e.p_hat, 0.5);
        assert!((e.ci_low - 0.49902).abs() < 5e-6);
        assert!((e.ci_high - 0.50098).abs() < 5e-6);
        let e = from_counts(0, 10, 1.0, seed());
        assert_eq!((e.p_hat, e.log_p, e.ci_low), (0.0, f64::NEG_INFINITY, 0.0));
        let e = from_counts(10, 10, 1.0, seed());
        assert_eq!((e.p_hat, e.ci_high), (1.0, 1.0));
    }

    #[test]
    fn exact_line_fit() {
        let pts: Vec<FitPoint> = [1.0, 2.0, 3.5, 5.0]
            .iter()
            .map(|&s| FitPoint { scale: s, log_p: -0.2 * s + 0.1, weight: 1.0 + s })
            .collect();
        let fit = fit_weighted_line(&pts).unwrap();
        assert_relative_eq!(fit.slope, -0.2, epsilon = 1e-14);
        assert_relative_eq!(fit.intercept, 0.1, epsilon = 1e-14);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        let pts: Vec<FitPoint> =
            (1..=3).map(|s| FitPoint { scale: s as f64, log_p: -(s as f64), weight: 1.0 }).collect();
        let fit = fit_weighted_line(&pts).unwrap();
        assert_relative_eq!(fit.slope, -1.0, epsilon = 1e-14);
        assert_relative_eq!(fit.intercept, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn fit_needs_three_usable_points() {
        let ests =
            vec![from_counts(5, 10, 1.0, seed()), from_counts(0, 10, 2.0, seed()), from_counts(3, 10, 3.0, seed())];
        assert_eq!(fit_exponent(&ests).unwrap_err(), Error::InsufficientData { usable: 2, needed: 3 });
    }

    #[test]
    fn delta_method_weight() {
        let e = from_counts(250, 1000, 1.0, seed());
        assert_relative_eq!(log_p_weight(&e), 0.25 * 1000.0 / 0.75, max_relative = 1e-14);
        let e = from_counts(1000, 1000, 1.0, seed());
        assert_eq!(log_p_weight(&e), 1e6);
    }

    #[test]
    fn whole_line_rejects_odd_degree() {
        let r = sweep_n(Side::WholeLine, &[17], 0.5, 10, 1, SampleOptions::default());
        assert_eq!(r.unwrap_err(), Error::OddDegreeWholeLine { n: 17 });
        assert!(sweep_n(Side::HalfLine, &[8], 0.5, 10, 1, SampleOptions::default()).is_err());
    }

    #[test]
    fn degenerate_degree_is_a_coin() {
        let e = &sweep_n(Side::HalfLine, &[0], 0.05, 40_000, 3, SampleOptions::default()).unwrap()[0];
        assert!(e.ci_low <= 0.5 + 0.01 && 0.5 - 0.01 <= e.ci_high);
    }

    #[test]
    fn whole_line_grid_is_symmetric() {
        let g = sweep_grid(Side::WholeLine, 100, 0.05).unwrap();
        assert_eq!(g.start, -g.end);
        assert!(g.end <= 10.0 + 3.0 * 10.0 / 100f64.ln());
        assert_eq!(g.len() % 2, 1);
    }

    #[test]
    fn decomposition_rejects_small_degree() {
        assert!(product_decomposition(2, 0.05, 10, 0, SampleOptions::default()).is_err());
        assert!(product_decomposition(65, 0.05, 10, 0, SampleOptions::default()).is_err());
    }

    #[test]
    fn slepian_arithmetic() {
        let full = from_counts(100, 1000, 1.0, seed());
        let a = from_counts(500, 1000, 1.0, seed());
        let check = slepian_check(&full, &[&a, &a]);
        assert_relative_eq!(check.product, 0.25);
        assert!(check.pass == (check.margin >= 0.0));
        assert!(check.combined_half_width > full.half_width());
    }
}
