//! Truncated exponential series and the special functions built on them.
//!
//! Everything here works in log domain. The partial sums `sum_{i<=n} z^i / i!`
//! are accumulated outward from their largest term with ratio recurrences, so
//! every intermediate stays in `[0, 1]` relative to the peak. The alternating
//! sums `sum_{i<=n} (-z)^i / i!` go through an escalation ladder: compensated
//! summation, then the cancellation-free representation
//!
//! ```text
//! e^z sum_{i<=n} (-z)^i / i! = 1 + (-1)^n sum_{k>=0} z^{n+1+k} / (n! k! (n+1+k))
//! ```
//!
//! and finally exact dyadic-rational arithmetic.

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const UNIT_ROUNDOFF: f64 = f64::EPSILON / 2.0;

/// Partial-sum magnitude over result magnitude above which plain summation is
/// abandoned.
pub const CANCELLATION_RATIO_LIMIT: f64 = 1e8;

/// Relative forward-error bound a compensated sum must meet to be accepted.
const DIRECT_RELATIVE_TOLERANCE: f64 = 1e-11;

/// Largest bigint working size (in bits) the exact fallback will attempt.
const EXACT_BIT_BUDGET: u64 = 8_000_000;

const FACTORIALS: [u64; 21] = {
    let mut table = [1u64; 21];
    let mut i = 1;
    while i < 21 {
        table[i] = table[i - 1] * i as u64;
        i += 1;
    }
    table
};

/// Natural log of a nonnegative quantity; `-inf` encodes zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogValue {
    pub log_magnitude: f64,
}

impl LogValue {
    pub const ZERO: LogValue = LogValue { log_magnitude: f64::NEG_INFINITY };
    pub const ONE: LogValue = LogValue { log_magnitude: 0.0 };

    pub fn new(log_magnitude: f64) -> Self {
        LogValue { log_magnitude }
    }

    /// The linear value; saturates to `inf` rather than reporting garbage.
    pub fn value(self) -> f64 {
        self.log_magnitude.exp()
    }
}

/// A real number stored as sign and log-magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedLog {
    /// One of `-1.0`, `0.0`, `1.0`.
    pub sign: f64,
    pub log_magnitude: f64,
}

impl SignedLog {
    pub const ZERO: SignedLog = SignedLog { sign: 0.0, log_magnitude: f64::NEG_INFINITY };

    pub fn positive(log_magnitude: f64) -> Self {
        SignedLog { sign: 1.0, log_magnitude }
    }

    pub fn value(self) -> f64 {
        if self.sign == 0.0 {
            0.0
        } else {
            self.sign * self.log_magnitude.exp()
        }
    }

    /// Multiplies by `e^shift`.
    pub fn scale_exp(self, shift: f64) -> Self {
        SignedLog { sign: self.sign, log_magnitude: self.log_magnitude + shift }
    }
}

/// Value of an alternating partial exponential sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedSeriesValue {
    pub value: f64,
    /// Set when plain compensated summation was not trusted and an escalated
    /// evaluation produced the value.
    pub condition_flag: bool,
}

/// `log(exp(a) + exp(b))` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if hi == f64::INFINITY {
        return f64::INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum exp(x_i))` over a slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY || hi == f64::INFINITY {
        return hi;
    }
    hi + values.iter().map(|v| (v - hi).exp()).sum::<f64>().ln()
}

/// `ln(i!)`: exact table below 21, Stirling series above.
pub fn log_factorial(i: u64) -> f64 {
    if i <= 20 {
        return (FACTORIALS[i as usize] as f64).ln();
    }
    let x = i as f64 + 1.0;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let correction = inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0))));
    (x - 0.5) * x.ln() - x + HALF_LN_2PI + correction
}

/// Log of the Weyl coefficient `1 / sqrt(i!)`.
pub fn log_weyl_coeff(i: u64) -> f64 {
    -0.5 * log_factorial(i)
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// `log sum_{i=0}^{n} z^i / i!` for `z >= 0`.
pub fn log_partial_exp(n: u64, z: f64) -> LogValue {
    debug_assert!(z >= 0.0, "log_partial_exp needs z >= 0, got {z}");
    if z <= 0.0 || n == 0 {
        return LogValue::ONE;
    }
    let peak = if z >= n as f64 { n } else { (z.floor() as u64).min(n) };
    let log_peak = peak as f64 * z.ln() - log_factorial(peak);

    let mut acc = CompensatedSum::default();
    acc.add(1.0);
    // Below the peak: t_{i-1} / t_i = i / z <= 1.
    let mut term = 1.0;
    let mut i = peak;
    while i > 0 {
        term *= i as f64 / z;
        acc.add(term);
        if term < 1e-18 * acc.sum {
            break;
        }
        i -= 1;
    }
    // Above the peak: t_{i+1} / t_i = z / (i + 1) < 1.
    let mut term = 1.0;
    let mut i = peak;
    while i < n {
        term *= z / (i + 1) as f64;
        acc.add(term);
        if term < 1e-18 * acc.sum {
            break;
        }
        i += 1;
    }
    LogValue::new(log_peak + acc.total().ln())
}

/// `sum_{i=0}^{n} (-z)^i / i!` for `z >= 0`.
pub fn alternating_partial_exp(n: u64, z: f64) -> Result<SignedSeriesValue> {
    let (sum, condition_flag) = alternating_log(n, z)?;
    Ok(SignedSeriesValue { value: sum.value(), condition_flag })
}

/// Sign and log-magnitude of `sum_{i=0}^{n} (-z)^i / i!`, plus whether the
/// evaluation escalated past compensated summation.
pub fn alternating_log(n: u64, z: f64) -> Result<(SignedLog, bool)> {
    if !(z >= 0.0) || !z.is_finite() {
        return Err(Error::InvalidParameter(format!("alternating series needs finite z >= 0, got {z}")));
    }
    if z == 0.0 || n == 0 {
        return Ok((SignedLog::positive(0.0), false));
    }
    if let Some(value) = direct_alternating(n, z) {
        let sum = if value > 0.0 {
            SignedLog::positive(value.ln())
        } else {
            SignedLog { sign: -1.0, log_magnitude: (-value).ln() }
        };
        return Ok((sum, false));
    }
    if let Some(scaled) = integral_alternating(n, z) {
        return Ok((scaled.scale_exp(-z), true));
    }
    exact_alternating(n, z).map(|s| (s, true))
}

/// Sign and log-magnitude of `l_n(z) = e^z sum_{i<=n} (-z)^i / i!`.
pub fn scaled_alternating_partial_exp(n: u64, z: f64) -> Result<SignedLog> {
    alternating_log(n, z).map(|(s, _)| s.scale_exp(z))
}

/// Compensated summation; `None` when the forward-error bound is too loose to
/// trust.
fn direct_alternating(n: u64, z: f64) -> Option<f64> {
    // Terms would overflow before the cancellation check could reject them.
    if z > 600.0 {
        return None;
    }
    let mut acc = CompensatedSum::default();
    acc.add(1.0);
    let mut term = 1.0f64;
    let mut max_abs = 1.0f64;
    let mut weighted = 1.0f64;
    for i in 1..=n {
        term *= -z / i as f64;
        acc.add(term);
        let abs = term.abs();
        max_abs = max_abs.max(abs);
        weighted += (i + 1) as f64 * abs;
        if i as f64 > z && abs <= 1e-18 * acc.sum.abs() {
            break;
        }
    }
    let total = acc.total();
    if total == 0.0 || !total.is_finite() {
        return None;
    }
    // Each term carries ~i roundings from the recurrence; the compensated sum
    // adds one more rounding of the result.
    let error_bound = UNIT_ROUNDOFF * (2.0 * weighted + total.abs());
    let cancellation = max_abs / total.abs();
    if cancellation <= CANCELLATION_RATIO_LIMIT && error_bound <= DIRECT_RELATIVE_TOLERANCE * total.abs() {
        Some(total)
    } else {
        None
    }
}

/// Log of `int_0^z e^t t^n / n! dt = sum_{k>=0} z^{n+1+k} / (n! k! (n+1+k))`.
pub fn log_exp_power_integral(n: u64, z: f64) -> f64 {
    if z <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let ln_z = z.ln();
    let nf = n as f64;
    let log_term = |k: u64| -> f64 {
        let kf = k as f64;
        (nf + 1.0 + kf) * ln_z - log_factorial(n) - log_factorial(k) - (nf + 1.0 + kf).ln()
    };
    // The mode sits at or below floor(z); sum outward from there.
    let start = z.floor() as u64;
    let mut acc = CompensatedSum::default();
    acc.add(1.0);
    let mut term = 1.0f64;
    let mut k = start;
    while k > 0 {
        let kf = k as f64;
        // T_{k-1} / T_k = k (n+1+k) / (z (n+k))
        term *= kf * (nf + 1.0 + kf) / (z * (nf + kf));
        acc.add(term);
        if term < 1e-18 * acc.sum {
            break;
        }
        k -= 1;
    }
    let mut term = 1.0f64;
    let mut k = start;
    loop {
        let kf = k as f64;
        // T_{k+1} / T_k = z (n+1+k) / ((k+1) (n+2+k))
        term *= z * (nf + 1.0 + kf) / ((kf + 1.0) * (nf + 2.0 + kf));
        acc.add(term);
        if term < 1e-18 * acc.sum {
            break;
        }
        k += 1;
    }
    log_term(start) + acc.total().ln()
}

/// `l_n(z)` via the positive-series representation; `None` when odd `n`
/// leaves `1 - S` too cancelled to certify.
fn integral_alternating(n: u64, z: f64) -> Option<SignedLog> {
    let log_s = log_exp_power_integral(n, z);
    if n % 2 == 0 {
        return Some(SignedLog::positive(log_add_exp(0.0, log_s)));
    }
    let half = 0.5f64.ln();
    let two = 2.0f64.ln();
    if log_s < half {
        Some(SignedLog::positive((-log_s.exp()).ln_1p()))
    } else if log_s > two {
        Some(SignedLog { sign: -1.0, log_magnitude: log_s + (-(-log_s).exp()).ln_1p() })
    } else {
        let diff = -log_s.exp_m1();
        if diff.abs() < 1e-3 {
            None
        } else if diff > 0.0 {
            Some(SignedLog::positive(diff.ln()))
        } else {
            Some(SignedLog { sign: -1.0, log_magnitude: (-diff).ln() })
        }
    }
}

/// Natural log of a positive big integer.
fn ln_biguint(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().map(f64::ln).unwrap_or(f64::NAN);
    }
    let shift = bits - 64;
    let top = (x >> shift).to_f64().unwrap_or(f64::NAN);
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// Exact evaluation at the dyadic rational `z = M / 2^s`.
fn exact_alternating(n: u64, z: f64) -> Result<SignedLog> {
    let (mantissa, exponent) = decompose(z);
    let (m, shift): (BigUint, u64) = if exponent >= 0 {
        (BigUint::from(mantissa) << exponent as u64, 0)
    } else {
        (BigUint::from(mantissa), (-exponent) as u64)
    };
    let work_bits = n.saturating_mul(m.bits() + shift + 64 - (n.leading_zeros() as u64));
    if work_bits > EXACT_BIT_BUDGET {
        return Err(precision_loss(n, z));
    }
    // sum_{i} (-1)^i (n!/i!) M^i 2^{s(n-i)}, evaluated by homogeneous Horner.
    let m = BigInt::from(m);
    let mut falling = BigUint::one();
    let mut acc = if n % 2 == 0 { BigInt::one() } else { -BigInt::one() };
    for i in (0..n).rev() {
        falling *= i + 1;
        let mut c = BigInt::from_biguint(Sign::Plus, falling.clone() << (shift * (n - i)));
        if i % 2 == 1 {
            c = -c;
        }
        acc = acc * &m + c;
    }
    if acc.is_zero() {
        return Ok(SignedLog::ZERO);
    }
    let sign = if acc.sign() == Sign::Minus { -1.0 } else { 1.0 };
    let log_num = ln_biguint(acc.magnitude());
    let log_den = ln_biguint(&falling) + (shift * n) as f64 * std::f64::consts::LN_2;
    Ok(SignedLog { sign, log_magnitude: log_num - log_den })
}

fn decompose(z: f64) -> (u64, i64) {
    let bits = z.to_bits();
    let raw_exponent = ((bits >> 52) & 0x7ff) as i64;
    let fraction = bits & ((1u64 << 52) - 1);
    if raw_exponent == 0 {
        (fraction, -1074)
    } else {
        (fraction | (1u64 << 52), raw_exponent - 1075)
    }
}

fn precision_loss(n: u64, z: f64) -> Error {
    // |1 - e^z S| <= e^{2z} z^{n+1} / (n+1)!  =>  S in e^{-z} +- e^{z} z^{n+1}/(n+1)!
    let radius = (z + (n as f64 + 1.0) * z.ln() - log_factorial(n + 1)).exp();
    let center = (-z).exp();
    Error::PrecisionLoss { n, z, lower: center - radius, upper: center + radius }
}

/// `P(Poi(x) > n)`, the regularized lower incomplete gamma `P(n+1, x)`.
pub fn poisson_tail(x: f64, n: u64) -> f64 {
    if !(x > 0.0) {
        return 0.0;
    }
    let a = n as f64 + 1.0;
    if x < a {
        // P(a, x) = e^{-x} x^a / Gamma(a+1) * sum_k x^k / ((a+1)...(a+k))
        let log_prefactor = -x + a * x.ln() - log_factorial(n + 1);
        let mut acc = CompensatedSum::default();
        acc.add(1.0);
        let mut term = 1.0;
        let mut k = 1.0;
        loop {
            term *= x / (a + k);
            acc.add(term);
            if term < 1e-18 * acc.sum {
                break;
            }
            k += 1.0;
        }
        (log_prefactor + acc.total().ln()).exp().min(1.0)
    } else {
        // Here the complement e^{-x} sum x^i/i! is at most about one half, so
        // subtracting it from one loses nothing.
        let log_q = log_partial_exp(n, x).log_magnitude - x;
        (-log_q.exp_m1()).clamp(0.0, 1.0)
    }
}

/// Cramér rate function of Poisson(1): `theta log theta - (theta - 1)`.
pub fn poisson_rate(theta: f64) -> f64 {
    theta * theta.ln() - (theta - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn partial_exp_examples() {
        assert_relative_eq!(log_partial_exp(1, 1.0).log_magnitude, 2f64.ln(), max_relative = 1e-14);
        assert_eq!(log_partial_exp(0, 7.3).log_magnitude, 0.0);
        assert_relative_eq!(log_partial_exp(2, 2.0).log_magnitude, 5f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn alternating_examples() {
        let v = alternating_partial_exp(2, 1.0).unwrap();
        assert_relative_eq!(v.value, 0.5, max_relative = 1e-14);
        assert!(!v.condition_flag);
        assert_relative_eq!(alternating_partial_exp(2, 3.0).unwrap().value, 2.5, max_relative = 1e-14);
        assert_relative_eq!(alternating_partial_exp(2, 2.0).unwrap().value, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn deep_cancellation_escalates() {
        let v = alternating_partial_exp(200, 40.0).unwrap();
        assert!(v.condition_flag);
        // For n >> z the partial sum is essentially e^{-z}.
        assert_relative_eq!(v.value, (-40.0f64).exp(), max_relative = 1e-10);
    }

    #[test]
    fn odd_near_root_uses_exact_path() {
        // l_1(z) = e^z (1 - z) vanishes at z = 1.
        let (s, flag) = alternating_log(1, 1.0 - 1e-9).unwrap();
        assert!(flag || s.value() > 0.0);
        assert_relative_eq!(s.value(), 1e-9, max_relative = 1e-6);
        let (s, _) = alternating_log(1, 1.0).unwrap();
        assert_eq!(s.sign, 0.0);
    }

    #[test]
    fn exact_route_matches_direct_on_tame_inputs() {
        for &(n, z) in &[(2u64, 3.0), (7, 0.75), (10, 2.5), (12, 1.0)] {
            let exact = exact_alternating(n, z).unwrap().value();
            let direct = direct_alternating(n, z).unwrap();
            assert_relative_eq!(exact, direct, max_relative = 1e-12);
        }
    }

    #[test]
    fn integral_route_matches_exact() {
        for &(n, z) in &[(10u64, 12.0), (64, 30.5), (3, 9.0), (200, 55.0)] {
            let exact = exact_alternating(n, z).unwrap();
            let via_integral = integral_alternating(n, z).unwrap().scale_exp(-z);
            assert_eq!(exact.sign, via_integral.sign);
            assert!((exact.log_magnitude - via_integral.log_magnitude).abs() < 1e-11);
        }
    }

    #[test]
    fn budget_exhaustion_reports_sandwich() {
        // Odd degree with l_n(z) crossing zero is only reachable exactly; a huge
        // degree blows the budget.
        let err = exact_alternating(2_000_001, 0.3).unwrap_err();
        match err {
            Error::PrecisionLoss { lower, upper, .. } => assert!(lower <= upper),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn poisson_tail_examples() {
        assert_relative_eq!(poisson_tail(1.0, 0), 1.0 - (-1.0f64).exp(), max_relative = 1e-13);
        assert_relative_eq!(poisson_tail(2.0, 2), 1.0 - 5.0 * (-2.0f64).exp(), max_relative = 1e-13);
        assert!((poisson_tail(10.0, 10) - 0.41696).abs() < 1e-5);
    }

    #[test]
    fn poisson_tail_keeps_relative_accuracy_deep_in_tail() {
        // P(Poi(1) > 30) is dominated by its first term 1/(e 31!).
        let first = (-1.0 - log_factorial(31)).exp();
        let tail = poisson_tail(1.0, 30);
        assert!(tail > first && tail < first * 1.04);
    }

    #[test]
    fn rate_function_examples() {
        assert_eq!(poisson_rate(1.0), 0.0);
        assert_relative_eq!(poisson_rate(2.0), 2.0 * 2f64.ln() - 1.0, max_relative = 1e-15);
        assert_relative_eq!(poisson_rate(0.5), 0.5 * 0.5f64.ln() + 0.5, max_relative = 1e-15);
    }

    #[test]
    fn weyl_coefficient_examples() {
        assert_eq!(log_weyl_coeff(0), 0.0);
        assert_relative_eq!(log_weyl_coeff(2), -0.5 * 2f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(log_weyl_coeff(10), -0.5 * 3_628_800f64.ln(), max_relative = 1e-15);
    }

    #[test]
    fn log_factorial_matches_log_sum_past_table() {
        let mut direct = 0.0f64;
        for i in 1..=5000u64 {
            direct += (i as f64).ln();
            if i >= 15 {
                assert_relative_eq!(log_factorial(i), direct, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn weyl_coefficients_decrease() {
        let mut prev = log_weyl_coeff(1);
        for i in (2..1_000_000u64).step_by(997) {
            let cur = log_weyl_coeff(i);
            assert!(cur < prev);
            prev = cur;
        }
    }

    #[test]
    fn log_add_exp_handles_infinities() {
        assert_eq!(log_add_exp(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert_relative_eq!(log_add_exp(0.0, 0.0), 2f64.ln());
        assert_relative_eq!(log_sum_exp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln());
    }
}
