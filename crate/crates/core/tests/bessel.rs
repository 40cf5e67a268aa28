use gff2dlab::bessel::{k0, k1, BesselError};
use proptest::prelude::*;

/// `K_ν(s) = ∫₀^∞ exp(−s cosh t) cosh(νt) dt` by the trapezoid rule, which
/// converges geometrically for this analytic, doubly decaying integrand.
fn trapezoid(nu: f64, s: f64) -> f64 {
    let h: f64 = 1.0 / 64.0;
    let mut sum = 0.5 * (-s).exp();
    let mut t = h;
    loop {
        let term = (-s * t.cosh()).exp() * (nu * t).cosh();
        sum += term;
        if term < 1e-300 || t > 60.0 {
            break;
        }
        t += h;
    }
    sum * h
}

// Reference digits from an arbitrary-precision evaluation.
const K0_TABLE: [(f64, f64); 6] = [
    (0.01, 4.721244730161095),
    (0.1, 2.4270690247020166),
    (1.0, 0.42102443824070834),
    (2.0, 0.11389387274953344),
    (5.0, 0.0036910983340425942),
    (20.0, 5.741237815336524e-10),
];
const K1_TABLE: [(f64, f64); 4] = [
    (0.1, 9.853844780870606),
    (1.0, 0.6019072301972346),
    (5.0, 0.004044613445452164),
    (20.0, 5.883057969557038e-10),
];

#[test]
fn frozen_values() {
    for (s, want) in K0_TABLE {
        let got = k0(s).unwrap();
        assert!((got.value - want).abs() <= 1e-12 * want.max(1.0), "K0({s}) = {} vs {want}", got.value);
    }
    for (s, want) in K1_TABLE {
        let got = k1(s).unwrap().value;
        assert!((got - want).abs() <= 1e-12 * want.max(1.0), "K1({s}) = {got} vs {want}");
    }
}

#[test]
fn trapezoid_oracle_agrees_with_table() {
    for (s, want) in K0_TABLE {
        assert!((trapezoid(0.0, s) - want).abs() <= 1e-12 * want.max(1.0));
    }
}

#[test]
fn domain_errors() {
    for s in [0.0, -1.0, f64::NAN, f64::INFINITY] {
        assert!(matches!(k0(s), Err(BesselError::Domain(_))));
        assert!(matches!(k1(s), Err(BesselError::Domain(_))));
    }
}

#[test]
fn finite_difference_derivative_on_log_grid() {
    for i in 0..20 {
        let t = 0.01 * 1000f64.powf(i as f64 / 19.0);
        let d = (k0(t + 1e-3 * t).unwrap().value - k0(t - 1e-3 * t).unwrap().value) / (2e-3 * t);
        assert!((d + k1(t).unwrap().value).abs() <= 1e-5 * k1(t).unwrap().value.max(1.0), "t = {t}");
    }
    let fd = (k0(0.999).unwrap().value - k0(1.001).unwrap().value) / 0.002;
    assert!((k1(1.0).unwrap().value - fd).abs() <= 1e-5);
}

#[test]
fn ratio_continuity_on_log_grid() {
    // ζ = t/200 keeps K₀(t ± ζ)/K₀(t) within 10% for every t ≤ 10; t/100
    // just misses at t = 10, where K₀ decays like e^{−t}.
    for i in 0..=60 {
        let t = 1e-4 * 1e5f64.powf(i as f64 / 60.0);
        let zeta = 0.005 * t;
        let k = k0(t).unwrap().value;
        assert!(k0(t + zeta).unwrap().value / k >= 0.9, "t = {t}");
        assert!(k0(t - zeta).unwrap().value / k <= 1.1, "t = {t}");
    }
}

proptest! {
    #[test]
    fn log_bound_with_unit_constant(t in 1e-12f64..=1.0) {
        let (k, log) = (k0(t).unwrap().value, (1.0 / t).ln());
        prop_assert!(log <= k && k <= log + 1.0, "t = {t}: {k}");
    }

    #[test]
    fn matches_integral(s in 1e-3f64..40.0) {
        for (nu, eval) in [(0.0, k0(s).unwrap()), (1.0, k1(s).unwrap())] {
            let oracle = trapezoid(nu, s);
            prop_assert!((eval.value - oracle).abs() <= 1e-10 * oracle, "ν={nu}, s={s}: {} vs {oracle}", eval.value);
            prop_assert!(eval.abs_error_bound <= 1e-10 * eval.value.max(1.0));
        }
    }

    #[test]
    fn derivative_is_minus_k1(s in 0.05f64..30.0) {
        let h = 1e-5 * s;
        let d = (k0(s + h).unwrap().value - k0(s - h).unwrap().value) / (2.0 * h);
        let want = -k1(s).unwrap().value;
        prop_assert!((d - want).abs() <= 1e-6 * want.abs());
    }

    #[test]
    fn ordered_and_decreasing(s in 1e-3f64..50.0, ds in 1e-3f64..1.0) {
        let (a, b) = (k0(s).unwrap().value, k1(s).unwrap().value);
        prop_assert!(0.0 < a && a < b);
        prop_assert!(k0(s + ds).unwrap().value < a);
    }
}
