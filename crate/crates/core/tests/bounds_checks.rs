//! Inequality checks at the documented example points and on the default
//! verification suite.

use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use weyl_persistence::bounds::*;
use weyl_persistence::kernels::corr;
use weyl_persistence::series::{poisson_tail, scaled_alternating_partial_exp};
use weyl_persistence::KernelSpec;

#[test]
fn default_suite_passes() {
    let reports = run_suite(&SuiteConfig::default()).unwrap();
    let names: Vec<&str> = reports.iter().map(|r| r.name.as_str()).collect();
    for expected in [
        "even_partial_exp_nonnegative",
        "poisson_sandwich",
        "poisson_rate_chain",
        "poisson_tail_identity",
        "alternating_sandwich",
        "b1_correlation_decay",
        "b3_mixed_sign",
        "b3_small_degree",
        "b3_large_degree",
        "b3_determinant_chain",
        "b3_modulus",
        "uniform_step_condition",
        "tail_domination",
    ] {
        assert!(names.contains(&expected), "missing {expected}");
    }
    for r in &reports {
        assert!(r.pass, "{} failed: {:?}", r.name, r);
        assert!(r.evaluated > 0, "{} evaluated nothing", r.name);
    }
}

#[test]
fn alternating_sandwich_at_large_degree_matches_exact_sum() {
    // l_1024(10) = e^10 sum_{i<=1024} (-10)^i / i! by exact rationals.
    let z = BigRational::from_integer((-10).into());
    let mut term = BigRational::one();
    let mut total = BigRational::one();
    for i in 1..=1024u32 {
        term = term * &z / BigRational::from_integer(i.into());
        total += &term;
    }
    let exact = total.to_f64().unwrap() * 10f64.exp();
    let got = scaled_alternating_partial_exp(1024, 10.0).unwrap().value();
    assert!((got - exact).abs() < 1e-12);
    let alpha = alpha_n(1024);
    let upper = 1.0 + (20.0 - alpha * alpha / 4.0).exp() / (2.0 * std::f64::consts::PI * 1024.0).sqrt();
    assert!(got <= upper && got >= 1.0);
}

#[test]
fn poisson_sandwich_lower_bound_at_large_degree() {
    let n = 4096u64;
    let alpha = alpha_n(n);
    let x = n as f64 - (n as f64).sqrt() * alpha;
    let margin = (-alpha * alpha / 4.0).exp() - poisson_tail(x, n);
    assert!(margin > 0.0);
    let r = check_poisson_sandwich(&[64, 4096], 200);
    assert!(r.pass);
    assert_eq!(r.details["smallest_passing_n"], 64.0);
}

#[test]
fn b1_example_points() {
    let a = corr(KernelSpec::WeylFinite { n: 400 }, 0.0, 3.0).unwrap();
    assert!(a <= 4.0 * (-4.5f64).exp());
    assert!((a / (-4.5f64).exp() - 1.0).abs() < 0.05);
    let a = corr(KernelSpec::WeylFinite { n: 400 }, -5.0, 10.0).unwrap();
    assert!(a <= 1.0 / 225.0);
    assert_eq!(corr(KernelSpec::WeylFinite { n: 400 }, 2.0, 2.0).unwrap(), 1.0);
}

#[test]
fn b1_reports_finite_threshold() {
    let r = check_b1(&[64], B1Grid::default()).unwrap();
    assert!(r.pass);
    assert!(r.details["tau_threshold"].is_finite());
    assert!(r.details["sup_log_ratio"] < -1.0);
}

#[test]
fn b3_example_points() {
    // Mixed signs inside a window of width u = 0.01.
    assert!(one_minus_corr(2, -0.005, 0.01).unwrap() <= 1e-4);
    assert_eq!(one_minus_corr(8, 1.0, 0.0).unwrap(), 0.0);
    // Determinant chain at n = 3, s = 1, t = 1.01.
    let gap = lagrange_gap(3, 1.0, 0.01);
    assert!(gap <= 3f64.powi(12) * 1e-4 * 1.0001);
}

#[test]
fn b3_rejects_large_u() {
    let grid = B3Grid { log_u: vec![1.0], max_s_points: 10 };
    assert!(check_b3(&[4], &grid).is_err());
}

#[test]
fn uniform_step_is_stable_under_refinement() {
    for n in [64u64, 256] {
        let (coarse, _) = uniform_delta(n, 101).unwrap();
        let (fine, _) = uniform_delta(n, 201).unwrap();
        assert!(coarse > 0.0 && (fine - coarse).abs() / coarse < 0.01);
    }
    assert!(uniform_delta(2, 10).is_err());
}

#[test]
fn tail_domination_margin_increases_in_x() {
    let n = 100;
    let alpha = alpha_n(n);
    let mut prev = f64::NEG_INFINITY;
    for k in 0..50 {
        let x = 10.0 + alpha + k as f64 * 0.1 * alpha;
        let m = tail_domination_margin(n, x);
        assert!(m > prev);
        prev = m;
    }
    assert!(tail_domination_margin(n, 10.0 + 2.0 * alpha) > 0.0);
}
