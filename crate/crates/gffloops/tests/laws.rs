use std::f64::consts::PI;

use gffloops::laws::*;
use gffloops::quad::{integrate, integrate_convolution, integrate_power_tail, integrate_to_inf, QuadControl};
use proptest::prelude::*;

fn ctl() -> QuadControl {
    QuadControl { abs_tol: 1e-14, rel_tol: 1e-11, max_panels: 8000 }
}

fn sc() -> SeriesControl {
    SeriesControl::default()
}

#[test]
fn dual_series_agree_at_unit_interval() {
    let r = interval_kernel_reflection(1.0, 1.0, 1.0, 0.0, 0.0, &sc()).unwrap();
    let s = interval_kernel_spectral(1.0, 1.0, 1.0, 0.0, 0.0, &sc()).unwrap();
    assert!((r - s).abs() <= 1e-10, "{r} vs {s}");
}

#[test]
fn dual_series_agree_on_grid() {
    let cases = [(1.0, 1.0), (GAP, GAP), (GAP, 3.0 * GAP), (0.3, 2.0)];
    for &(a, b) in &cases {
        let w: f64 = a + b;
        for &tr in &[0.02, 0.1, 0.35, 0.8, 2.0] {
            let t = tr * w * w;
            for i in 0..=8 {
                for j in 0..=8 {
                    let x = -a + w * i as f64 / 8.0;
                    let y = -a + w * j as f64 / 8.0;
                    let r = interval_kernel_reflection(a, b, t, x, y, &sc()).unwrap();
                    let s = interval_kernel_spectral(a, b, t, x, y, &sc()).unwrap();
                    assert!((r - s).abs() <= 1e-10, "a={a} b={b} t={t} x={x} y={y}: {r} vs {s}");
                }
            }
        }
    }
}

#[test]
fn beta_series_agree() {
    for &x in &[0.5, GAP, PI] {
        for &tr in &[0.03, 0.1, 0.35, 1.0, 3.0] {
            let t = tr * 4.0 * x * x;
            let r = beta_reflection(x, t, &sc()).unwrap();
            let s = beta_spectral(x, t, &sc()).unwrap();
            assert!((r - s).abs() <= 1e-10 * (1.0 + r.abs()), "x={x} t={t}: {r} vs {s}");
        }
    }
}

#[test]
fn q_a_normalization() {
    let m = integrate_to_inf(|t| q_a(1.3, t), 0.0, ctl()).unwrap();
    assert!((m - 1.0).abs() < 1e-6, "{m}");
    // Closed-form CDF against quadrature at a finite horizon.
    let part = integrate(|t| q_a(1.3, t), 0.0, 5.0, ctl()).unwrap();
    assert!((part - q_a_cdf(1.3, 5.0)).abs() < 1e-10);
}

#[test]
fn q_ab_side_masses() {
    for &(a, b) in &[(1.0, 1.0), (1.0, 3.0), (GAP, 3.0 * GAP)] {
        let lo = integrate_to_inf(|t| q_ab(a, b, Side::Lower, t, &sc()).unwrap(), 0.0, ctl()).unwrap();
        let up = integrate_to_inf(|t| q_ab(a, b, Side::Upper, t, &sc()).unwrap(), 0.0, ctl()).unwrap();
        assert!((lo - b / (a + b)).abs() < 1e-6, "a={a} b={b}: {lo}");
        assert!((up - a / (a + b)).abs() < 1e-6, "a={a} b={b}: {up}");
    }
}

#[test]
fn q_ab_forms_agree_across_crossover() {
    let (a, b) = (1.0, 2.0);
    let w: f64 = a + b;
    let t = 0.35 * w * w;
    for side in [Side::Lower, Side::Upper] {
        let dist = match side {
            Side::Lower => a,
            Side::Upper => b,
        };
        // Independent image-sum evaluation with many terms.
        let mut refl = 0.0;
        for k in -40i32..=40 {
            let z = dist + 2.0 * k as f64 * w;
            refl += z / (2.0 * PI * t * t * t).sqrt() * (-z * z / (2.0 * t)).exp();
        }
        let v = q_ab(a, b, side, t * (1.0 + 1e-12), &sc()).unwrap();
        assert!((v - refl).abs() < 1e-10, "{v} vs {refl}");
    }
}

#[test]
fn beta_normalization() {
    let m = integrate_to_inf(|t| beta(GAP, t, &sc()).unwrap(), 0.0, ctl()).unwrap();
    assert!((m - 1.0).abs() < 1e-8, "{m}");
}

#[test]
fn q_check0_normalization() {
    let m = integrate_power_tail(|t| q_check0(t, &sc()).unwrap(), 0.0, 20.0, QuadControl { abs_tol: 1e-12, rel_tol: 1e-9, max_panels: 4000 })
        .unwrap();
    assert!((m - 1.0).abs() < 1e-6, "{m}");
}

#[test]
fn q_check0_matches_convolution_cdf() {
    // P(T + H <= M) with H the hitting time of 2λ: ∫ exit(s) erfc(2λ/√(2(M-s))) ds.
    let horizon = 6.0;
    let lhs = integrate(|t| q_check0(t, &sc()).unwrap(), 0.0, horizon, ctl()).unwrap();
    let rhs = integrate(
        |s| {
            let e = q_ab(GAP, GAP, Side::Lower, s, &sc()).unwrap() + q_ab(GAP, GAP, Side::Upper, s, &sc()).unwrap();
            e * q_a_cdf(GAP, horizon - s)
        },
        0.0,
        horizon,
        ctl(),
    )
    .unwrap();
    assert!((lhs - rhs).abs() < 1e-8, "{lhs} vs {rhs}");
}

#[test]
fn chapman_kolmogorov() {
    let (a, b) = (1.0, 1.5);
    for &(s, t, x, y) in &[(0.3, 0.5, 0.0, 0.2), (1.0, 2.0, -0.5, 1.0), (0.05, 3.0, 0.9, -0.9), (2.0, 0.1, 0.1, 0.1)] {
        let lhs = integrate(
            |z| {
                heat_kernel(Kernel::Interval { a, b }, s, x, z, &sc()).unwrap()
                    * heat_kernel(Kernel::Interval { a, b }, t, z, y, &sc()).unwrap()
            },
            -a,
            b,
            ctl(),
        )
        .unwrap();
        let rhs = heat_kernel(Kernel::Interval { a, b }, s + t, x, y, &sc()).unwrap();
        assert!((lhs - rhs).abs() < 1e-7, "{lhs} vs {rhs}");
    }
}

#[test]
fn flux_identity() {
    for &(a, b) in &[(1.0, 1.0), (GAP, 3.0 * GAP), (0.4, 1.1)] {
        for &t in &[0.2, 0.7, 1.5, 4.0] {
            let h = 1e-4;
            let deriv = (interval_survival(a, b, t + h, &sc()).unwrap() - interval_survival(a, b, t - h, &sc()).unwrap())
                / (2.0 * h);
            let flux = q_ab(a, b, Side::Lower, t, &sc()).unwrap() + q_ab(a, b, Side::Upper, t, &sc()).unwrap();
            assert!((flux + deriv).abs() < 1e-6, "a={a} b={b} t={t}: {flux} vs {}", -deriv);
        }
    }
}

fn marginal_over_t1(kind: JointKind, t2: f64) -> f64 {
    integrate_convolution(|t1| if t1 <= 0.0 || t1 >= t2 { 0.0 } else { joint_density(kind, t1, t2, &sc()).unwrap() }, t2, ctl())
        .unwrap()
}

#[test]
fn tvs_marginalizes_to_exit_density() {
    for &(a, b) in &[(GAP, GAP), (GAP, 3.0 * GAP), (1.5 * GAP, 2.5 * GAP)] {
        for side in [Side::Lower, Side::Upper] {
            for &t2 in &[0.3, 1.0, 2.5, 6.0] {
                let m = marginal_over_t1(JointKind::Tvs { a, b, side }, t2);
                let q = q_ab(a, b, side, t2, &sc()).unwrap();
                assert!((m - q).abs() < 1e-8, "a={a} b={b} {side:?} t2={t2}: {m} vs {q}");
            }
        }
    }
}

#[test]
fn fps_marginalizes_to_hitting_density() {
    for &a in &[GAP, 2.0 * GAP] {
        for &t2 in &[0.3, 1.0, 4.0, 20.0] {
            let m = marginal_over_t1(JointKind::Fps { a }, t2);
            assert!((m - q_a(a, t2)).abs() < 1e-8, "a={a} t2={t2}: {m} vs {}", q_a(a, t2));
        }
    }
}

fn fps_total_mass(a: f64) -> f64 {
    // Fubini with the inner t2-integral done first: ∫ dt1 f(t1) ∫_{t1}^∞ β(t2-t1) dt2.
    let inner = integrate_to_inf(|s| beta(GAP, s, &sc()).unwrap(), 0.0, ctl()).unwrap();
    let outer = integrate_to_inf(|t1| if t1 <= 0.0 { 0.0 } else { fps_tau_density(a, t1, &sc()).unwrap() }, 0.0, ctl()).unwrap();
    inner * outer
}

#[test]
fn fps_joint_mass() {
    for &a in &[GAP, 2.0 * GAP, 3.0] {
        let m = fps_total_mass(a);
        assert!((m - 1.0).abs() < 1e-6, "a={a}: {m}");
    }
    // Below the gap the path may never visit -a+2λ; the density carries mass a/(2λ).
    let m = fps_total_mass(1.0);
    assert!((m - 1.0 / GAP).abs() < 1e-6, "{m}");
}

#[test]
fn fps_joint_mass_nested_quadrature() {
    let a = GAP;
    let m = integrate_power_tail(
        |t2| if t2 <= 0.0 { 0.0 } else { marginal_over_t1(JointKind::Fps { a }, t2) },
        0.0,
        20.0,
        QuadControl { abs_tol: 1e-12, rel_tol: 1e-9, max_panels: 4000 },
    )
    .unwrap();
    assert!((m - 1.0).abs() < 1e-6, "{m}");
}

#[test]
fn fps_bridge_below_barrier_full_mass() {
    for &(a, v, l) in &[(1.0, -1.0, 1.0), (GAP, -2.0, 0.5), (0.5, -3.0, 2.0)] {
        let m = integrate(|t| bridge_hit_density(a, v, l, t), 0.0, l, ctl()).unwrap();
        assert!((m - 1.0).abs() < 1e-6, "a={a} v={v} L={l}: {m}");
    }
}

#[test]
fn bridge_hit_mass_matches_reflection_principle() {
    for &(a, v, l) in &[(1.0, 0.0, 1.0), (GAP, GAP, 0.3), (0.5, 2.0, 4.0)] {
        let m = integrate(|t| bridge_hit_density(a, v, l, t), 0.0, l, ctl()).unwrap();
        let oracle = (-2.0 * a * (a + v) / l).exp();
        assert!((m - oracle).abs() < 1e-8, "{m} vs {oracle}");
    }
}

#[test]
fn bridge_exit_mass_matches_image_sum() {
    for &(a, b, v, l) in &[(GAP, GAP, 0.0, 0.26), (GAP, GAP, GAP, 0.26), (1.0, 2.0, 0.5, 3.0)] {
        let m: f64 = [Side::Lower, Side::Upper]
            .iter()
            .map(|&s| integrate(|t| bridge_exit_density(a, b, s, v, l, t, &sc()).unwrap(), 0.0, l, ctl()).unwrap())
            .sum();
        let stay = bridge_stay_probability(0.0, v.min(b - 1e-300), -a, b, l);
        let oracle = if v >= b || v <= -a { 1.0 } else { 1.0 - stay };
        assert!((m - oracle).abs() < 1e-7, "a={a} b={b} v={v} L={l}: {m} vs {oracle}");
    }
}

#[test]
fn tvs_bridge_marginalizes() {
    let (a, b, v, l) = (GAP, 3.0 * GAP, 0.5, 5.0);
    for side in [Side::Lower, Side::Upper] {
        for &t2 in &[0.5, 2.0, 4.5] {
            let m = marginal_over_t1(JointKind::TvsBridge { a, b, side, v, l }, t2);
            let q = bridge_exit_density(a, b, side, v, l, t2, &sc()).unwrap();
            assert!((m - q).abs() < 1e-8, "{m} vs {q}");
        }
    }
}

#[test]
fn cluster_bridge_long_limit() {
    // As L grows the bridge weight tends to 1.
    let t = 1.7;
    let d = joint_density(JointKind::ClusterBridgeT { v: 0.0, l: 1e8 }, 0.0, t, &sc()).unwrap();
    let q = q_check0(t, &sc()).unwrap();
    assert!((d - q).abs() < 1e-7 * q.max(1e-300) + 1e-12);
}

#[test]
fn laplace_matches_numerical_transform() {
    for &nu in &[0.25, 0.5, 1.0, 2.0] {
        let num = integrate_to_inf(|t| (-nu * t).exp() * beta(GAP, t, &sc()).unwrap(), 0.0, ctl()).unwrap();
        let cf = bessel3_laplace(GAP, nu).unwrap();
        assert!((num - cf).abs() < 1e-8, "nu={nu}: {num} vs {cf}");
    }
    // Continued branch, inside the radius of convergence.
    let nu = -0.5;
    let num = integrate_to_inf(|t| (-nu * t).exp() * beta(GAP, t, &sc()).unwrap(), 0.0, ctl()).unwrap();
    assert!((num - bessel3_laplace(GAP, nu).unwrap()).abs() < 1e-7);
}

#[test]
fn joint_density_rejects_bad_order() {
    assert!(joint_density(JointKind::Fps { a: 1.0 }, 2.0, 1.0, &sc()).is_err());
    assert!(joint_density(JointKind::FpsBridge { a: 1.0, v: 0.0, l: 1.0 }, 0.5, 1.5, &sc()).is_err());
    assert!(exit_density(ExitKind::Qa { a: 1.0 }, 0.0, &sc()).is_err());
    assert!(exit_density(ExitKind::Qa { a: 1.0 }, -1.0, &sc()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_dual_series(a in 0.2f64..3.0, b in 0.2f64..3.0, tr in 0.05f64..1.5, u in 0.0f64..1.0, w in 0.0f64..1.0) {
        let width = a + b;
        let t = tr * width * width;
        let x = -a + u * width;
        let y = -a + w * width;
        let r = interval_kernel_reflection(a, b, t, x, y, &sc()).unwrap();
        let s = interval_kernel_spectral(a, b, t, x, y, &sc()).unwrap();
        prop_assert!((r - s).abs() <= 1e-10);
    }

    #[test]
    fn prop_kernels_nonnegative_and_symmetric(a in 0.2f64..3.0, b in 0.2f64..3.0, t in 0.01f64..10.0, u in 0.0f64..1.0, w in 0.0f64..1.0) {
        let width = a + b;
        let x = -a + u * width;
        let y = -a + w * width;
        let k = Kernel::Interval { a, b };
        let p = heat_kernel(k, t, x, y, &sc()).unwrap();
        let q = heat_kernel(k, t, y, x, &sc()).unwrap();
        prop_assert!(p >= 0.0);
        prop_assert!((p - q).abs() < 1e-12);
        // Domination by the half-line and free kernels.
        let h = heat_kernel(Kernel::HalfLine { a }, t, x, y, &sc()).unwrap();
        prop_assert!(p <= h + 1e-12);
        prop_assert!(h <= free_kernel(t, x, y) + 1e-12);
    }

    #[test]
    fn prop_laplace_monotone(nu1 in -1.0f64..3.0, d in 0.01f64..2.0) {
        let f1 = bessel3_laplace(GAP, nu1).unwrap();
        let f2 = bessel3_laplace(GAP, nu1 + d).unwrap();
        prop_assert!(f2 < f1);
        prop_assert!(f2 > 0.0);
    }
}
