mod common;

use common::{conjugate_oracle, const_model, legendre_oracle};
use mfplan::model::{
    coupling_f, gap_YF, gap_YH, growth_check, hamiltonian, hamiltonian_grad_p, lagrangian, perspective_L,
    F_star_value, F_value, ModelSpec,
};
use proptest::prelude::*;

fn model_strategy() -> impl Strategy<Value = ModelSpec> {
    (1.5f64..4.0, 0.5f64..2.0, -1.0f64..1.0, -1.0f64..1.0, 0.0f64..1.0, 0.5f64..2.0, -1.0f64..1.0)
        .prop_map(|(p, g, z0, z1, vh, a, vf)| const_model(p, g, [z0, z1], vh, a, vf))
}

fn vec2() -> impl Strategy<Value = [f64; 2]> {
    (-5.0f64..5.0, -5.0f64..5.0).prop_map(|(a, b)| [a, b])
}

const X: [f64; 2] = [0.3, -0.2];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lagrangian_is_the_legendre_transform(model in model_strategy(), v in vec2()) {
        let brute = legendre_oracle(|p| hamiltonian(&model, &X, &p), v);
        let exact = lagrangian(&model, &X, &v);
        prop_assert!((exact - brute).abs() <= 1e-6 * (1.0 + exact.abs()), "{exact} vs {brute}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn fenchel_young_inequality(model in model_strategy(), m in 0.0f64..10.0, alpha in -5.0f64..10.0) {
        let fy = F_value(&model, &X, m).unwrap() + F_star_value(&model, &X, alpha) - alpha * m;
        prop_assert!(fy >= -1e-12, "{fy}");
    }

    #[test]
    fn fenchel_young_equality_on_the_graph(model in model_strategy(), m in 0.0f64..10.0) {
        let alpha = coupling_f(&model, &X, m).unwrap();
        let fy = F_value(&model, &X, m).unwrap() + F_star_value(&model, &X, alpha) - alpha * m;
        prop_assert!(fy.abs() <= 1e-9 * (1.0 + alpha.abs() * m), "{fy}");
        prop_assert!(gap_YF(&model, &X, m, alpha).unwrap().abs() <= 1e-9 * (1.0 + alpha.abs() * m));
    }

    #[test]
    fn yh_vanishes_on_the_optimal_velocity(model in model_strategy(), p in vec2()) {
        let hp = hamiltonian_grad_p(&model, &X, &p);
        let yh = gap_YH(&model, &X, &p, &[-hp[0], -hp[1]]);
        prop_assert!(yh.abs() <= 1e-12 * (1.0 + p[0] * p[0] + p[1] * p[1]), "{yh}");
    }

    #[test]
    fn yh_is_nonnegative(model in model_strategy(), p in vec2(), v in vec2()) {
        prop_assert!(gap_YH(&model, &X, &p, &v) >= -1e-12);
    }

    #[test]
    fn gradient_matches_central_differences(model in model_strategy(), p in vec2()) {
        let h = 1e-5;
        let g = hamiltonian_grad_p(&model, &X, &p);
        for i in 0..2 {
            let (mut a, mut b) = (p, p);
            a[i] += h;
            b[i] -= h;
            let fd = (hamiltonian(&model, &X, &a) - hamiltonian(&model, &X, &b)) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()), "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn f_star_zero_set_and_monotone(model in model_strategy(), a1 in -5.0f64..10.0, a2 in -5.0f64..10.0) {
        let f0 = coupling_f(&model, &X, 0.0).unwrap();
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        prop_assert!(F_star_value(&model, &X, lo) <= F_star_value(&model, &X, hi));
        prop_assert_eq!(F_star_value(&model, &X, f0 - lo.abs()), 0.0);
        if hi > f0 {
            prop_assert!(F_star_value(&model, &X, hi) > 0.0);
        }
    }

    #[test]
    fn perspective_is_jointly_convex(
        model in model_strategy(),
        m1 in 0.01f64..5.0, m2 in 0.01f64..5.0, w1 in vec2(), w2 in vec2(),
    ) {
        let mid = perspective_L(&model, &X, 0.5 * (m1 + m2), &[0.5 * (w1[0] + w2[0]), 0.5 * (w1[1] + w2[1])]).unwrap();
        let avg = 0.5 * (perspective_L(&model, &X, m1, &w1).unwrap() + perspective_L(&model, &X, m2, &w2).unwrap());
        prop_assert!(mid <= avg + 1e-10 * (1.0 + avg.abs()));
    }
}

#[test]
fn hamiltonian_examples() {
    let x = [0.0, 0.0];
    assert_eq!(hamiltonian(&ModelSpec::quadratic(2.0), &x, &[3.0, 4.0]), 12.5);
    assert_eq!(hamiltonian(&const_model(2.0, 1.0, [1.0, 0.0], 2.0, 1.0, 0.0), &x, &[0.0, 0.0]), -2.0);
    assert_eq!(hamiltonian(&const_model(2.0, 2.0, [0.0, 0.0], 0.0, 1.0, 0.0), &x, &[1.0, 1.0]), 2.0);
    assert_eq!(
        hamiltonian_grad_p(&const_model(2.0, 2.0, [0.0, 1.0], 0.0, 1.0, 0.0), &x, &[1.0, 0.0]),
        [2.0, 1.0]
    );
}

#[test]
fn lagrangian_minimum_sits_at_minus_drift() {
    let m = const_model(2.0, 1.7, [0.4, -0.3], 0.25, 1.0, 0.0);
    assert!((lagrangian(&m, &X, &[-0.4, 0.3]) - 0.25).abs() < 1e-15);
    assert_eq!(lagrangian(&ModelSpec::quadratic(2.0), &X, &[3.0, 4.0]), 12.5);
}

#[test]
fn coupling_examples() {
    assert_eq!(coupling_f(&ModelSpec::quadratic(2.0), &X, 3.0).unwrap(), 3.0);
    assert_eq!(coupling_f(&ModelSpec::quadratic(3.5), &X, 0.0).unwrap(), 0.0);
    assert_eq!(coupling_f(&const_model(3.0, 1.0, [0.0; 2], 0.0, 2.0, -1.0), &X, 2.0).unwrap(), 7.0);
    assert!(coupling_f(&ModelSpec::quadratic(2.0), &X, -1.0).is_err());
    assert!(F_value(&ModelSpec::quadratic(2.0), &X, -1e-3).is_err());
}

#[test]
fn quadratic_is_self_conjugate() {
    let m = ModelSpec::quadratic(2.0);
    assert_eq!(F_value(&m, &X, 3.0).unwrap(), 4.5);
    assert_eq!(F_star_value(&m, &X, 3.0), 4.5);
    assert_eq!(F_star_value(&m, &X, -1.0), 0.0);
}

#[test]
fn cubic_conjugate_matches_brute_force() {
    let m = ModelSpec::quadratic(3.0);
    for alpha in [0.0, 0.5, 1.0, 3.0, 10.0, 40.0] {
        let brute = conjugate_oracle(|v| F_value(&m, &X, v).unwrap(), alpha);
        let exact = F_star_value(&m, &X, alpha);
        assert!((brute - exact).abs() < 1e-6, "alpha {alpha}: {brute} vs {exact}");
    }
}

#[test]
fn gap_examples() {
    let m = ModelSpec::quadratic(2.0);
    assert_eq!(gap_YH(&m, &X, &[1.0, 0.0], &[-1.0, 0.0]), 0.0);
    assert_eq!(gap_YH(&m, &X, &[1.0, 0.0], &[1.0, 0.0]), 2.0);
    assert_eq!(gap_YF(&m, &X, 3.0, 3.0).unwrap(), 0.0);
    assert_eq!(gap_YF(&m, &X, 3.0, 0.0).unwrap(), 4.5);
    assert!(gap_YF(&m, &X, -1.0, 0.0).is_err());
}

#[test]
fn perspective_branches() {
    let m = ModelSpec::quadratic(2.0);
    assert_eq!(perspective_L(&m, &X, 0.0, &[0.0, 0.0]).unwrap(), 0.0);
    assert_eq!(perspective_L(&m, &X, 0.0, &[1.0, 0.0]).unwrap(), f64::INFINITY);
    assert_eq!(perspective_L(&m, &X, 2.0, &[2.0, 0.0]).unwrap(), 1.0);
}

#[test]
fn growth_check_examples() {
    let samples: Vec<Vec<f64>> = (0..100).map(|i| vec![-1.0 + 0.02 * i as f64, 0.5]).collect();
    assert!(growth_check(&ModelSpec::quadratic(2.0), &samples).is_ok());
    let mut bad = const_model(2.0, 3.0, [0.0; 2], 0.0, 1.0, 0.0);
    bad.constants.c_h = 2.0;
    assert!(growth_check(&bad, &samples).is_err());
}
