//! Correlation kernels: symmetry, range, positive semidefiniteness and the
//! Gaussian limit.

use nalgebra::SymmetricEigen;
use proptest::prelude::*;
use weyl_persistence::kernels::*;
use weyl_persistence::{Error, GridSpec, KernelSpec};

fn weyl_by_direct_sums(n: u64, x: f64, y: f64) -> f64 {
    let sum = |z: f64| -> f64 {
        let mut term = 1.0;
        let mut total = 1.0;
        for i in 1..=n {
            term *= z / i as f64;
            total += term;
        }
        total
    };
    sum(x * y) / (sum(x * x) * sum(y * y)).sqrt()
}

#[test]
fn weyl_matches_direct_sums_where_those_are_safe() {
    for &n in &[1u64, 2, 5, 12, 40] {
        for &(x, y) in &[(0.3, 0.9), (-0.5, 1.5), (2.0, -0.25), (1.0, 1.0), (-2.0, -1.0)] {
            let got = corr(KernelSpec::WeylFinite { n }, x, y).unwrap();
            let want = weyl_by_direct_sums(n, x, y);
            assert!((got - want).abs() < 1e-13, "n={n} ({x},{y}): {got} vs {want}");
        }
    }
}

#[test]
fn correlation_matrices_are_positive_semidefinite() {
    let cases = [
        (KernelSpec::GaussLimit, GridSpec::new(0.0, 6.0, 0.25).unwrap()),
        (KernelSpec::Sech, GridSpec::new(0.0, 20.0, 0.5).unwrap()),
        (KernelSpec::WeylFinite { n: 64 }, GridSpec::new(-9.0, 9.0, 0.5).unwrap()),
        (KernelSpec::WeylFinite { n: 7 }, GridSpec::new(-3.0, 3.0, 0.2).unwrap()),
    ];
    for (kernel, grid) in cases {
        let m = build_corr_matrix(kernel, &grid).unwrap();
        assert_eq!(m, m.transpose());
        let eig = SymmetricEigen::new(m);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-10, "{} min eigenvalue {min}", kernel.name());
    }
}

#[test]
fn even_degree_correlations_are_nonnegative() {
    for &n in &[2u64, 4, 10, 64] {
        for i in -20..=20 {
            for j in -20..=20 {
                let (x, y) = (i as f64 * 0.4, j as f64 * 0.4);
                assert!(corr(KernelSpec::WeylFinite { n }, x, y).unwrap() >= 0.0);
            }
        }
    }
}

#[test]
fn finite_degree_converges_to_gaussian_kernel() {
    let mut prev = f64::INFINITY;
    for n in [50u64, 100, 200, 400, 800] {
        let gap = limit_gap(n, 1.0, 2.0).unwrap();
        assert!(gap <= prev);
        prev = gap;
    }
    assert!(prev < 1e-10);
}

#[test]
fn cap_errors_name_the_sizes() {
    let grid = GridSpec::new(0.0, 1.0, 0.001).unwrap();
    assert_eq!(
        build_corr_matrix_with_cap(KernelSpec::GaussLimit, &grid, 100).unwrap_err(),
        Error::GridTooLarge { points: 1001, cap: 100 }
    );
}

proptest! {
    #[test]
    fn correlations_are_symmetric_and_bounded(n in 0u64..300, x in -20.0f64..20.0, y in -20.0f64..20.0) {
        for kernel in [KernelSpec::WeylFinite { n }, KernelSpec::GaussLimit, KernelSpec::Sech] {
            let a = corr(kernel, x, y).unwrap();
            let b = corr(kernel, y, x).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
            prop_assert!((-1.0..=1.0).contains(&a));
            prop_assert_eq!(corr(kernel, x, x).unwrap(), 1.0);
        }
    }

    #[test]
    fn stationary_kernels_depend_on_lag_only(x in -50.0f64..50.0, lag in 0.0f64..10.0, shift in -50.0f64..50.0) {
        for kernel in [KernelSpec::GaussLimit, KernelSpec::Sech] {
            let a = corr(kernel, x, x + lag).unwrap();
            let b = corr(kernel, shift, shift + lag).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
