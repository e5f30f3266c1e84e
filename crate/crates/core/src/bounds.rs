//! Numerical checks of the inequalities behind the exponent results.
//!
//! Each check sweeps a parameter box and reports the worst margin
//! `RHS - LHS` (or the value itself for nonnegativity claims). Anything built
//! from `x^{2i} / i!` sums is compared in log space.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{log_corr, weyl_log_variance, KernelSpec};
use crate::series::{
    alternating_log, log_add_exp, log_factorial, log_partial_exp, log_sum_exp, poisson_rate, poisson_tail,
    scaled_alternating_partial_exp,
};

/// Tolerance for exact analytic inequalities.
pub const ANALYTIC_TOLERANCE: f64 = 1e-9;
/// Tolerance for claims whose sup or inf over a continuum is sampled on a grid.
pub const SAMPLED_TOLERANCE: f64 = 1e-6;
/// Tolerance for the Poisson tail identity.
pub const IDENTITY_TOLERANCE: f64 = 1e-10;

/// Exponent `eta` in the boundedness check `|log u|^eta p^2(u) <= 1`.
pub const MODULUS_ETA: f64 = 1.5;
/// Lower bound asserted for the uniform step `Delta*(n)`.
pub const DELTA_FLOOR: f64 = 0.5;

/// `sqrt(n) / log n`.
pub fn alpha_n(n: u64) -> f64 {
    let nf = n as f64;
    nf.sqrt() / nf.ln()
}

/// Outcome of one sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub swept_box: String,
    /// Minimum of `RHS - LHS` over the box (or over the regime above a
    /// reported threshold).
    pub worst_margin: f64,
    pub worst_point: BTreeMap<String, f64>,
    pub pass: bool,
    pub tolerance: f64,
    /// Points evaluated.
    pub evaluated: usize,
    /// Thresholds, per-branch margins and other diagnostics.
    pub details: BTreeMap<String, f64>,
}

/// Running minimum of a margin with its location. NaN counts as a failure.
#[derive(Debug, Clone)]
struct Worst {
    margin: f64,
    point: Vec<(&'static str, f64)>,
    count: usize,
}

impl Worst {
    fn new() -> Self {
        Worst { margin: f64::INFINITY, point: Vec::new(), count: 0 }
    }

    fn observe(&mut self, margin: f64, point: &[(&'static str, f64)]) {
        self.count += 1;
        let margin = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
        if margin < self.margin || self.point.is_empty() {
            self.margin = margin;
            self.point = point.to_vec();
        }
    }

    /// Keeps the earlier candidate on ties, so merging in a fixed order is
    /// deterministic.
    fn merge(mut self, other: Worst) -> Worst {
        let count = self.count + other.count;
        if other.margin < self.margin || (self.point.is_empty() && !other.point.is_empty()) {
            self = other;
        }
        self.count = count;
        self
    }

    fn report(self, name: &str, swept_box: String, tolerance: f64, details: BTreeMap<String, f64>) -> BoundReport {
        let pass = self.margin >= -tolerance;
        self.report_with(name, swept_box, tolerance, details, pass)
    }

    fn report_with(
        self,
        name: &str,
        swept_box: String,
        tolerance: f64,
        details: BTreeMap<String, f64>,
        pass: bool,
    ) -> BoundReport {
        BoundReport {
            name: name.to_string(),
            swept_box,
            worst_margin: self.margin,
            worst_point: self.point.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            pass,
            tolerance,
            evaluated: self.count,
            details,
        }
    }
}

fn merge_all(parts: Vec<Worst>) -> Worst {
    parts.into_iter().fold(Worst::new(), Worst::merge)
}

fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![lo];
    }
    (0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect()
}

fn format_list(ns: &[u64]) -> String {
    ns.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",")
}

fn require_even(ns: &[u64]) -> Result<()> {
    match ns.iter().find(|&&n| n % 2 == 1) {
        Some(n) => Err(Error::InvalidParameter(format!("check needs even degrees, got {n}"))),
        None => Ok(()),
    }
}

/// Smallest degree from which every larger swept degree passes.
fn passing_threshold(per_n: &[(u64, bool)]) -> Option<u64> {
    let mut sorted = per_n.to_vec();
    sorted.sort_by_key(|&(n, _)| n);
    let mut threshold = None;
    for &(n, ok) in sorted.iter().rev() {
        if !ok {
            break;
        }
        threshold = Some(n);
    }
    threshold
}

/// Per-degree sweeps whose contract is "report the smallest passing degree":
/// the report passes when such a degree exists, and its worst margin covers
/// the degrees from that threshold on.
fn threshold_report(
    name: &str,
    swept_box: String,
    tolerance: f64,
    per_n: Vec<(u64, Worst)>,
    mut details: BTreeMap<String, f64>,
) -> BoundReport {
    let flags: Vec<(u64, bool)> = per_n.iter().map(|(n, w)| (*n, w.margin >= -tolerance)).collect();
    let threshold = passing_threshold(&flags);
    let overall = merge_all(per_n.iter().map(|(_, w)| w.clone()).collect());
    details.insert("worst_margin_all_n".into(), overall.margin);
    for (n, w) in &per_n {
        details.insert(format!("worst_margin_n{n}"), w.margin);
    }
    match threshold {
        Some(t) => {
            details.insert("smallest_passing_n".into(), t as f64);
            let above = merge_all(per_n.into_iter().filter(|(n, _)| *n >= t).map(|(_, w)| w).collect());
            above.report_with(name, swept_box, tolerance, details, true)
        }
        None => overall.report_with(name, swept_box, tolerance, details, false),
    }
}

/// `sum_{i<=n} x^i / i! >= 0` for even `n`; the margin is the value itself.
pub fn check_even_nonneg(n_list: &[u64], z_grid: &[f64]) -> Result<BoundReport> {
    require_even(n_list)?;
    let parts: Vec<Worst> = n_list
        .par_iter()
        .map(|&n| {
            let mut worst = Worst::new();
            for &x in z_grid {
                let value = if x >= 0.0 {
                    log_partial_exp(n, x).value()
                } else {
                    match alternating_log(n, -x) {
                        Ok((s, _)) => s.value(),
                        Err(_) => f64::NAN,
                    }
                };
                worst.observe(value, &[("n", n as f64), ("x", x)]);
            }
            worst
        })
        .collect();
    let (lo, hi) = z_grid.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    Ok(merge_all(parts).report(
        "even_partial_exp_nonnegative",
        format!("n in {{{}}}, x in [{lo}, {hi}] ({} points)", format_list(n_list), z_grid.len()),
        ANALYTIC_TOLERANCE,
        BTreeMap::new(),
    ))
}

/// `1 - exp(-alpha_n^2 / 4) <= e^{-x} sum_{i<=n} x^i / i! <= 1` on
/// `0 <= x <= n - sqrt(n) alpha_n`. The lower side is compared as
/// `log P(Poi(x) > n) <= -alpha_n^2 / 4`.
pub fn check_poisson_sandwich(n_list: &[u64], points: usize) -> BoundReport {
    let points = points.max(200);
    let per_n: Vec<(u64, Worst)> = n_list
        .par_iter()
        .filter_map(|&n| {
            let alpha = alpha_n(n);
            let x_max = n as f64 - (n as f64).sqrt() * alpha;
            if n < 2 || !(x_max > 0.0) {
                return None;
            }
            let mut worst = Worst::new();
            for x in linspace(0.0, x_max, points) {
                let tail = poisson_tail(x, n);
                worst.observe(tail, &[("n", n as f64), ("x", x), ("side", 1.0)]);
                let lower = if tail > 0.0 { -alpha * alpha / 4.0 - tail.ln() } else { f64::INFINITY };
                worst.observe(lower, &[("n", n as f64), ("x", x), ("side", -1.0)]);
            }
            Some((n, worst))
        })
        .collect();
    threshold_report(
        "poisson_sandwich",
        format!("n in {{{}}}, x in [0, n - sqrt(n) alpha_n] ({points} points)", format_list(n_list)),
        ANALYTIC_TOLERANCE,
        per_n,
        BTreeMap::new(),
    )
}

/// `k I(n / k) >= alpha_n^2 / 3` at `k = ceil(n - sqrt(n) alpha_n)`.
pub fn check_rate_chain(n_list: &[u64]) -> BoundReport {
    let mut worst = Worst::new();
    for &n in n_list {
        let alpha = alpha_n(n);
        let k = (n as f64 - (n as f64).sqrt() * alpha).ceil();
        if !(k >= 1.0) {
            continue;
        }
        let margin = k * poisson_rate(n as f64 / k) - alpha * alpha / 3.0;
        worst.observe(margin, &[("n", n as f64), ("k", k)]);
    }
    worst.report(
        "poisson_rate_chain",
        format!("n in {{{}}}, k = ceil(n - sqrt(n) alpha_n)", format_list(n_list)),
        ANALYTIC_TOLERANCE,
        BTreeMap::new(),
    )
}

/// `1 - e^{-x} sum_{i<=n} x^i / i! = P(Poi(x) > n)` at random `x <= 30`,
/// `n <= 100`; the margin is minus the absolute discrepancy.
pub fn check_poisson_identity(samples: usize, seed: u64) -> BoundReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Worst::new();
    for _ in 0..samples {
        let x: f64 = 30.0 * (1.0 - rng.random::<f64>());
        let n: u64 = rng.random_range(0..=100);
        let complement = (log_partial_exp(n, x).log_magnitude - x).exp();
        let diff = (1.0 - complement - poisson_tail(x, n)).abs();
        worst.observe(-diff, &[("n", n as f64), ("x", x)]);
    }
    worst.report(
        "poisson_tail_identity",
        format!("{samples} uniform points, x in (0, 30], n in [0, 100], seed {seed}"),
        IDENTITY_TOLERANCE,
        BTreeMap::new(),
    )
}

/// `1 - e^{2x} x^{n+1} / (n+1)! <= e^x sum_{i<=n} (-x)^i / i!
///  <= 1 + e^{2x} exp(-alpha_n^2 / 4) / sqrt(2 pi n)` on
/// `0 <= x <= n - sqrt(n) alpha_n`, compared in log space. Where the lower
/// bound is nonpositive it holds trivially and is counted as vacuous.
pub fn check_alternating_sandwich(n_list: &[u64], points: usize) -> Result<BoundReport> {
    require_even(n_list)?;
    let results: Vec<(u64, Worst, usize, usize)> = n_list
        .par_iter()
        .filter_map(|&n| {
            let alpha = alpha_n(n);
            let nf = n as f64;
            let x_max = nf - nf.sqrt() * alpha;
            if n < 2 || !(x_max > 0.0) {
                return None;
            }
            let mut worst = Worst::new();
            let mut vacuous = 0;
            let mut flagged = 0;
            let log_upper_excess = -alpha * alpha / 4.0 - 0.5 * (2.0 * std::f64::consts::PI * nf).ln();
            for x in linspace(0.0, x_max, points) {
                let log_ell = match scaled_alternating_partial_exp(n, x) {
                    Ok(s) if s.sign > 0.0 => s.log_magnitude,
                    Ok(_) => f64::NAN,
                    Err(_) => {
                        flagged += 1;
                        continue;
                    }
                };
                let upper = log_add_exp(0.0, 2.0 * x + log_upper_excess);
                worst.observe(upper - log_ell, &[("n", nf), ("x", x), ("side", 1.0)]);
                let q = if x > 0.0 { 2.0 * x + (nf + 1.0) * x.ln() - log_factorial(n + 1) } else { f64::NEG_INFINITY };
                if q >= 0.0 {
                    vacuous += 1;
                } else {
                    let lower = (-q.exp()).ln_1p();
                    worst.observe(log_ell - lower, &[("n", nf), ("x", x), ("side", -1.0)]);
                }
            }
            Some((n, worst, vacuous, flagged))
        })
        .collect();
    let mut details = BTreeMap::new();
    details.insert("vacuous_lower_points".into(), results.iter().map(|r| r.2).sum::<usize>() as f64);
    details.insert("precision_flagged_points".into(), results.iter().map(|r| r.3).sum::<usize>() as f64);
    let per_n = results.into_iter().map(|(n, w, _, _)| (n, w)).collect();
    Ok(threshold_report(
        "alternating_sandwich",
        format!("n in {{{}}}, x in [0, n - sqrt(n) alpha_n] ({points} points)", format_list(n_list)),
        ANALYTIC_TOLERANCE,
        per_n,
        details,
    ))
}

/// Sweep parameters of [`check_b1`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct B1Grid {
    pub s_step: f64,
    /// Must be a multiple of `s_step`.
    pub tau_step: f64,
    /// Smallest lag at which the mixed-sign margin enters the report.
    pub tau_min_mixed: f64,
}

impl Default for B1Grid {
    fn default() -> Self {
        B1Grid { s_step: 0.05, tau_step: 0.25, tau_min_mixed: 10.0 }
    }
}

/// Decay of the Weyl correlation on `|s|, |s + tau| <= sqrt(n) - alpha_n`:
/// `A <= 4 exp(-tau^2 / 2)` for same-sign pairs and `A <= tau^{-2}` for
/// mixed-sign pairs. Also reports the smallest lag beyond which the
/// mixed-sign bound holds everywhere, and `sup log A / log tau` past it.
pub fn check_b1(n_list: &[u64], grid: B1Grid) -> Result<BoundReport> {
    require_even(n_list)?;
    let ratio = (grid.tau_step / grid.s_step).round() as usize;
    if ratio == 0 || ((ratio as f64) * grid.s_step - grid.tau_step).abs() > 1e-9 {
        return Err(Error::InvalidParameter("tau_step must be a positive multiple of s_step".into()));
    }
    struct PerN {
        same: Worst,
        mixed: Worst,
        // Worst mixed margin at each lag index.
        mixed_by_lag: Vec<f64>,
        ratio_by_lag: Vec<f64>,
    }
    let per_n: Vec<(u64, PerN)> = n_list
        .iter()
        .filter_map(|&n| {
            let reach = (n as f64).sqrt() - alpha_n(n);
            if n < 2 || !(reach > 0.0) {
                return None;
            }
            let kernel = KernelSpec::WeylFinite { n };
            let cells = (2.0 * reach / grid.s_step + 1e-9).floor() as usize;
            let s_of = |k: usize| -reach + k as f64 * grid.s_step;
            let lags = cells / ratio;
            let rows: Vec<(Worst, Worst, Vec<f64>, Vec<f64>)> = (0..=cells)
                .into_par_iter()
                .map(|k| {
                    let s = s_of(k);
                    let mut same = Worst::new();
                    let mut mixed = Worst::new();
                    let mut by_lag = vec![f64::INFINITY; lags + 1];
                    let mut ratio_lag = vec![f64::NEG_INFINITY; lags + 1];
                    for m in 0..=lags {
                        let j = k + m * ratio;
                        if j > cells {
                            break;
                        }
                        let t = s_of(j);
                        let tau = m as f64 * grid.tau_step;
                        let log_a = match log_corr(kernel, s, t) {
                            Ok(v) if v.sign > 0.0 => v.log_magnitude,
                            Ok(_) => continue,
                            Err(_) => f64::NAN,
                        };
                        let point = [("n", n as f64), ("s", s), ("tau", tau)];
                        if s * t >= 0.0 {
                            same.observe(4f64.ln() - tau * tau / 2.0 - log_a, &point);
                        } else {
                            let margin = -2.0 * tau.ln() - log_a;
                            by_lag[m] = by_lag[m].min(margin);
                            if tau >= grid.tau_min_mixed {
                                mixed.observe(margin, &point);
                            }
                        }
                        if tau > 1.0 {
                            ratio_lag[m] = ratio_lag[m].max(log_a / tau.ln());
                        }
                    }
                    (same, mixed, by_lag, ratio_lag)
                })
                .collect();
            let mut same = Worst::new();
            let mut mixed = Worst::new();
            let mut mixed_by_lag = vec![f64::INFINITY; lags + 1];
            let mut ratio_by_lag = vec![f64::NEG_INFINITY; lags + 1];
            for (a, b, by_lag, ratio_lag) in rows {
                same = same.merge(a);
                mixed = mixed.merge(b);
                for m in 0..=lags {
                    mixed_by_lag[m] = mixed_by_lag[m].min(by_lag[m]);
                    ratio_by_lag[m] = ratio_by_lag[m].max(ratio_lag[m]);
                }
            }
            Some((n, PerN { same, mixed, mixed_by_lag, ratio_by_lag }))
        })
        .collect();

    let mut details = BTreeMap::new();
    let mut same_all = Worst::new();
    let mut mixed_all = Worst::new();
    let mut threshold_all = 0.0f64;
    let mut sup_ratio = f64::NEG_INFINITY;
    for (n, p) in per_n {
        // Largest lag index with a failing mixed-sign margin.
        let last_fail = p.mixed_by_lag.iter().rposition(|&m| m < 0.0);
        let threshold = match last_fail {
            Some(m) if m + 1 >= p.mixed_by_lag.len() => f64::INFINITY,
            Some(m) => (m + 1) as f64 * grid.tau_step,
            None => grid.tau_step,
        };
        threshold_all = threshold_all.max(threshold);
        let from = (threshold.max(grid.tau_min_mixed) / grid.tau_step).ceil() as usize;
        let ratio_n = p.ratio_by_lag.iter().skip(from).cloned().fold(f64::NEG_INFINITY, f64::max);
        sup_ratio = sup_ratio.max(ratio_n);
        details.insert(format!("tau_threshold_n{n}"), threshold);
        details.insert(format!("sup_log_ratio_n{n}"), ratio_n);
        details.insert(format!("same_sign_margin_n{n}"), p.same.margin);
        details.insert(format!("mixed_sign_margin_n{n}"), p.mixed.margin);
        same_all = same_all.merge(p.same);
        mixed_all = mixed_all.merge(p.mixed);
    }
    details.insert("same_sign_margin".into(), same_all.margin);
    details.insert("mixed_sign_margin".into(), mixed_all.margin);
    details.insert("tau_threshold".into(), threshold_all);
    details.insert("sup_log_ratio".into(), sup_ratio);
    let worst = same_all.merge(mixed_all);
    let pass = worst.margin >= -SAMPLED_TOLERANCE && threshold_all.is_finite() && sup_ratio < -1.0;
    Ok(worst.report_with(
        "b1_correlation_decay",
        format!(
            "n in {{{}}}, |s|, |s + tau| <= sqrt(n) - alpha_n, s step {}, tau step {}, mixed-sign tau >= {}",
            format_list(n_list),
            grid.s_step,
            grid.tau_step,
            grid.tau_min_mixed
        ),
        SAMPLED_TOLERANCE,
        details,
        pass,
    ))
}

/// `D_s D_t - N^2 = sum_{0<=i<j<=n} (s^i t^j - s^j t^i)^2 / (i! j!)` with
/// `t = s + tau`; the differences are factored through `tau` so nothing
/// cancels. Negligible tails are dropped once the terms are decreasing.
pub fn lagrange_gap(n: u64, s: f64, tau: f64) -> f64 {
    let t = s + tau;
    let n = n as usize;
    let reach = s.abs().max(t.abs());
    let mut total = 0.0f64;
    // (st)^i / sqrt(i!)
    let mut st_pow = 1.0f64;
    let mut inv_root_fact_i = 1.0f64;
    for i in 0..n {
        if i > 0 {
            st_pow *= s * t / (i as f64).sqrt();
            inv_root_fact_i /= (i as f64).sqrt();
        }
        let mut row = 0.0f64;
        // d_k = (t^k - s^k) / tau, via d_k = t d_{k-1} + s^{k-1}
        let mut d = 0.0f64;
        let mut s_pow = 1.0f64;
        let mut inv_root_fact_j = inv_root_fact_i;
        for k in 1..=(n - i) {
            d = t * d + s_pow;
            s_pow *= s;
            inv_root_fact_j /= ((i + k) as f64).sqrt();
            let term = st_pow * tau * d * inv_root_fact_j;
            let sq = term * term;
            row += sq;
            if sq <= 1e-20 * row && reach * reach < (i + k) as f64 {
                break;
            }
        }
        total += row;
        if i > 0 && row <= 1e-20 * total && reach * reach < i as f64 {
            break;
        }
    }
    total
}

/// `1 - A_n(s, s + tau)` without cancellation when `A` is close to one:
/// `(D_s D_t - N^2) / (sqrt(D_s D_t) (sqrt(D_s D_t) + N))`.
pub fn one_minus_corr(n: u64, s: f64, tau: f64) -> Result<f64> {
    let t = s + tau;
    if tau == 0.0 {
        return Ok(0.0);
    }
    if n <= 32 || s.abs().max(t.abs()) < 1.0 {
        let gap = lagrange_gap(n, s, tau);
        let log_root = 0.5 * (weyl_log_variance(n, s) + weyl_log_variance(n, t));
        let numerator = crate::kernels::weyl_log_covariance(n, s, t)?;
        let root = log_root.exp();
        return Ok(gap / (root * (root + numerator.value())));
    }
    let log_a = log_corr(KernelSpec::WeylFinite { n }, s, t)?;
    Ok(-(log_a.log_magnitude).exp_m1() * log_a.sign + (1.0 - log_a.sign))
}

/// Sweep parameters of [`check_b3`]: `u = exp(-L)` for each `L` listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct B3Grid {
    pub log_u: Vec<f64>,
    /// Cap on the number of `s` points per swept range.
    pub max_s_points: usize,
}

impl Default for B3Grid {
    fn default() -> Self {
        // L log-spaced over [4, 100].
        let log_u = (0..16).map(|k| 4.0 * 25f64.powf(k as f64 / 15.0)).collect();
        B3Grid { log_u, max_s_points: 400 }
    }
}

/// Default degrees for [`check_b3`]: small evens (where the small-degree
/// bound applies) plus the main suite.
pub fn default_b3_degrees() -> Vec<u64> {
    vec![2, 4, 6, 8, 10, 12, 14, 16, 32, 64, 100, 256, 1024]
}

/// Near-diagonal correlation loss, split as in the three regimes:
/// - mixed signs, `0 <= t - s <= u`: `1 - A <= u^2`;
/// - same sign on `[0, sqrt(n) - alpha_n]`, `n <= sqrt|log u|`: `1 - A <= u`;
/// - same sign, `n >= sqrt|log u|`: `1 - A <= 1 / |log u|^2`;
///
/// plus the modulus bound `|log u|^1.5 p^2(u) <= 1` with
/// `p^2(u) = 2 - 2 inf A` over all swept degrees, and the determinant chain
/// `D_s D_t - N^2 <= n^{3n+3} (t - s)^2`.
pub fn check_b3(n_list: &[u64], grid: &B3Grid) -> Result<Vec<BoundReport>> {
    require_even(n_list)?;
    if let Some(l) = grid.log_u.iter().find(|&&l| !(l >= 4.0)) {
        return Err(Error::InvalidParameter(format!("b3 needs sqrt|log u| >= 2, got |log u| = {l}")));
    }
    let mut c31 = Worst::new();
    let mut c32 = Worst::new();
    let mut c33 = Worst::new();
    let mut chain = Worst::new();
    let mut modulus = Worst::new();
    let mut details = BTreeMap::new();
    for &log_u in &grid.log_u {
        let u = (-log_u).exp();
        let small_n_cap = log_u.sqrt();
        // Largest 1 - A over all regimes and degrees at this u.
        let mut loss = 1.0 - (-u * u / 2.0).exp();
        let results: Vec<(u64, Worst, Worst, Worst, Worst, f64)> = n_list
            .par_iter()
            .map(|&n| {
                let nf = n as f64;
                let mut w31 = Worst::new();
                let mut w32 = Worst::new();
                let mut w33 = Worst::new();
                let mut wchain = Worst::new();
                let mut max_loss = 0.0f64;
                // Mixed-sign pairs: s in [-u, 0), t = s + tau in (0, u].
                for k in 1..=10 {
                    let s = -u * k as f64 / 10.0;
                    for m in (k + 1)..=10 {
                        let tau = u * m as f64 / 10.0;
                        let value = one_minus_corr(n, s, tau).unwrap_or(f64::NAN);
                        max_loss = max_loss.max(value);
                        w31.observe(u * u - value, &[("n", nf), ("u", u), ("s", s), ("tau", tau)]);
                    }
                }
                let reach = nf.sqrt() - alpha_n(n);
                if n >= 2 && reach > 0.0 {
                    let small = nf <= small_n_cap;
                    let s_step = (u / 10.0).max(reach / grid.max_s_points as f64);
                    let cells = (reach / s_step).floor() as usize;
                    for k in 0..=cells {
                        let s = k as f64 * s_step;
                        for m in 1..=10 {
                            let tau = u * m as f64 / 10.0;
                            if s + tau > reach {
                                break;
                            }
                            let value = one_minus_corr(n, s, tau).unwrap_or(f64::NAN);
                            max_loss = max_loss.max(value);
                            let point = [("n", nf), ("u", u), ("s", s), ("tau", tau)];
                            if small {
                                w32.observe(u - value, &point);
                                let log_gap = lagrange_gap(n, s, tau).ln();
                                let log_bound = (3.0 * nf + 3.0) * nf.ln() + 2.0 * tau.ln();
                                wchain.observe(log_bound - log_gap, &point);
                            } else {
                                w33.observe(1.0 / (log_u * log_u) - value, &point);
                            }
                        }
                    }
                }
                (n, w31, w32, w33, wchain, max_loss)
            })
            .collect();
        for (_, w31, w32, w33, wchain, max_loss) in results {
            c31 = c31.merge(w31);
            c32 = c32.merge(w32);
            c33 = c33.merge(w33);
            chain = chain.merge(wchain);
            loss = loss.max(max_loss);
        }
        let p2 = 2.0 * loss;
        details.insert(format!("p2_log_u_{log_u:.3}"), p2);
        modulus.observe(1.0 - log_u.powf(MODULUS_ETA) * p2, &[("u", u), ("log_u", log_u)]);
    }
    // Fixed arithmetic check of the determinant chain.
    let (n0, s0, t0) = (3u64, 1.0, 1.01);
    let gap0 = lagrange_gap(n0, s0, t0 - s0);
    let bound0 = (n0 as f64).powi(3 * n0 as i32 + 3) * (t0 - s0) * (t0 - s0);
    chain.observe(bound0.ln() - gap0.ln(), &[("n", 3.0), ("s", s0), ("tau", t0 - s0)]);
    details.insert("chain_gap_n3".into(), gap0);
    details.insert("chain_bound_n3".into(), bound0);

    let u_box = format!(
        "u = exp(-L), L in [{:.3}, {:.3}] ({} values), n in {{{}}}",
        grid.log_u.iter().cloned().fold(f64::INFINITY, f64::min),
        grid.log_u.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        grid.log_u.len(),
        format_list(n_list)
    );
    Ok(vec![
        c31.report("b3_mixed_sign", format!("{u_box}; s, tau on step u/10"), SAMPLED_TOLERANCE, BTreeMap::new()),
        c32.report(
            "b3_small_degree",
            format!("{u_box}; n <= sqrt|log u|, s in [0, sqrt(n) - alpha_n]"),
            SAMPLED_TOLERANCE,
            BTreeMap::new(),
        ),
        c33.report(
            "b3_large_degree",
            format!("{u_box}; n >= sqrt|log u|, s in [0, sqrt(n) - alpha_n]"),
            SAMPLED_TOLERANCE,
            BTreeMap::new(),
        ),
        chain.report(
            "b3_determinant_chain",
            format!("{u_box}; small-degree points and (3, 1, 1.01)"),
            ANALYTIC_TOLERANCE,
            BTreeMap::new(),
        ),
        modulus.report("b3_modulus", format!("{u_box}; eta = {MODULUS_ETA}"), SAMPLED_TOLERANCE, details),
    ])
}

/// Log-weights `i log x^2 - log i!` of the truncated Poisson law on `0..=n`.
fn poisson_log_weights(n: u64, x: f64) -> Vec<f64> {
    let log_x2 = 2.0 * x.ln();
    (0..=n).map(|i| i as f64 * log_x2 - log_factorial(i)).collect()
}

/// Weighted mean of `f(i)` under weights `x^{2i} / i!`, `i <= n`.
fn poisson_weighted_mean(n: u64, x: f64, f: impl Fn(f64) -> f64) -> f64 {
    let logs = poisson_log_weights(n, x);
    let peak = log_sum_exp(&logs);
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, lw) in logs.iter().enumerate() {
        let w = (lw - peak).exp();
        if w < 1e-300 {
            continue;
        }
        num += w * f(i as f64);
        den += w;
    }
    num / den
}

/// `E(g'^2) / E(g^2)` for `g(x) = exp(-x^2 / 2) f_n(x)`:
/// `sum (i/x - x)^2 x^{2i}/i! / sum x^{2i}/i!`. Needs `x > 0`.
pub fn variance_ratio_g(n: u64, x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    poisson_weighted_mean(n, x, |i| (i / x - x).powi(2))
}

/// `E(h'^2) / E(h^2)` for `h(x) = x^{-n} f_n(x)`:
/// `sum ((i - n)/x)^2 x^{2i}/i! / sum x^{2i}/i!`. Needs `x > 0`.
pub fn variance_ratio_h(n: u64, x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let nf = n as f64;
    poisson_weighted_mean(n, x, |i| ((i - nf) / x).powi(2))
}

/// Largest `Delta` with `2 Delta^2 ratio <= 1` over the `g` interval
/// `[sqrt(n) - alpha_n, sqrt(n)]` and the `h` interval
/// `[sqrt(n), sqrt(n) + alpha_n]`, each sampled at `points` points, and the
/// largest ratio seen.
pub fn uniform_delta(n: u64, points: usize) -> Result<(f64, f64)> {
    let root = (n as f64).sqrt();
    let alpha = alpha_n(n);
    if n < 2 || !(root - alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("sqrt(n) - alpha_n is not positive for n = {n}")));
    }
    let g = linspace(root - alpha, root, points).into_iter().map(|x| variance_ratio_g(n, x));
    let h = linspace(root, root + alpha, points).into_iter().map(|x| variance_ratio_h(n, x));
    let max_ratio = g.chain(h).fold(0.0f64, f64::max);
    Ok((1.0 / (2.0 * max_ratio).sqrt(), max_ratio))
}

/// The uniform-step condition `2 Delta^2 E(Z'^2) <= E(Z^2)` on the `g` and
/// `h` intervals: reports `Delta*(n)` per degree, asserts
/// `min_n Delta*(n) >= DELTA_FLOOR`, and that halving the sampling step moves
/// each `Delta*(n)` by less than 1%.
pub fn check_ldm_condition(n_list: &[u64], points: usize) -> Result<BoundReport> {
    let mut worst = Worst::new();
    let mut details = BTreeMap::new();
    let mut refinement_ok = true;
    for &n in n_list {
        if n < 64 {
            return Err(Error::InvalidParameter(format!("variance-ratio check needs n >= 64, got {n}")));
        }
        let (delta, max_ratio) = uniform_delta(n, points)?;
        let (fine, _) = uniform_delta(n, 2 * points - 1)?;
        let change = (fine - delta).abs() / delta;
        refinement_ok &= change < 0.01;
        details.insert(format!("delta_star_n{n}"), delta);
        details.insert(format!("max_ratio_n{n}"), max_ratio);
        details.insert(format!("refinement_change_n{n}"), change);
        worst.observe(delta - DELTA_FLOOR, &[("n", n as f64)]);
    }
    details.insert("delta_floor".into(), DELTA_FLOOR);
    let pass = worst.margin >= -SAMPLED_TOLERANCE && refinement_ok;
    Ok(worst.report_with(
        "uniform_step_condition",
        format!(
            "n in {{{}}}, x in [sqrt(n) - alpha_n, sqrt(n) + alpha_n] ({points} points per half, refined to {})",
            format_list(n_list),
            2 * points - 1
        ),
        SAMPLED_TOLERANCE,
        details,
        pass,
    ))
}

/// Log-margin of `sum_{i<n} x^i / sqrt(i!) <= log(n) x^n / sqrt(n!)`.
pub fn tail_domination_margin(n: u64, x: f64) -> f64 {
    let nf = n as f64;
    let log_x = x.ln();
    let lower: Vec<f64> = (0..n).map(|i| i as f64 * log_x - 0.5 * log_factorial(i)).collect();
    nf.ln().ln() + nf * log_x - 0.5 * log_factorial(n) - log_sum_exp(&lower)
}

/// Top-coefficient domination for `x` in `[sqrt(n) + alpha_n, sqrt(n) + 6 alpha_n]`;
/// also checks that the margin increases along the grid. `n <= 1` is outside
/// the regime (`log log n` undefined) and skipped.
pub fn check_tail_domination(n_list: &[u64], points: usize) -> BoundReport {
    let mut per_n = Vec::new();
    let mut details = BTreeMap::new();
    let mut monotone = true;
    let mut excluded = 0;
    for &n in n_list {
        if n <= 1 {
            excluded += 1;
            continue;
        }
        let root = (n as f64).sqrt();
        let alpha = alpha_n(n);
        let mut worst = Worst::new();
        let mut prev = f64::NEG_INFINITY;
        for x in linspace(root + alpha, root + 6.0 * alpha, points) {
            let margin = tail_domination_margin(n, x);
            monotone &= margin >= prev;
            prev = margin;
            worst.observe(margin, &[("n", n as f64), ("x", x)]);
        }
        per_n.push((n, worst));
    }
    details.insert("out_of_regime_degrees".into(), excluded as f64);
    details.insert("margin_increasing_in_x".into(), if monotone { 1.0 } else { 0.0 });
    let mut report = threshold_report(
        "tail_domination",
        format!("n in {{{}}}, x in [sqrt(n) + alpha_n, sqrt(n) + 6 alpha_n] ({points} points)", format_list(n_list)),
        ANALYTIC_TOLERANCE,
        per_n,
        details,
    );
    report.pass &= monotone;
    report
}

/// Parameters of the full verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub n_list: Vec<u64>,
    pub b3_n_list: Vec<u64>,
    pub nonneg_n_list: Vec<u64>,
    pub identity_samples: usize,
    pub identity_seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            n_list: vec![64, 100, 256, 1024],
            b3_n_list: default_b3_degrees(),
            nonneg_n_list: vec![2, 4, 6, 8, 10, 16, 64, 100, 256, 1024],
            identity_samples: 1000,
            identity_seed: 0x5EED,
        }
    }
}

/// Every report of the verification suite, in a fixed order.
pub fn run_suite(config: &SuiteConfig) -> Result<Vec<BoundReport>> {
    let z_grid = linspace(-60.0, 10.0, 561);
    let mut reports = vec![
        check_even_nonneg(&config.nonneg_n_list, &z_grid)?,
        check_poisson_sandwich(&config.n_list, 400),
        check_rate_chain(&config.n_list),
        check_poisson_identity(config.identity_samples, config.identity_seed),
        check_alternating_sandwich(&config.n_list, 200)?,
        check_b1(&config.n_list, B1Grid::default())?,
    ];
    reports.extend(check_b3(&config.b3_n_list, &B3Grid::default())?);
    reports.push(check_ldm_condition(&config.n_list, 201)?);
    reports.push(check_tail_domination(&config.n_list, 200));
    Ok(reports)
}
