use std::f64::consts::PI;

use nirsim::kernels::{
    field_covariance, ir_criterion_scan, pair_kernel_momentum, pair_kernel_position, s_hat,
    s_norm_sq, FormFactor, IrTestFunction, KernelTable, ModelParams, DEFAULT_TABLE_RESOLUTION,
    TABLE_TOLERANCE,
};
use nirsim::quadrature::{integrate, Tolerance};
use nirsim::stats::linear_regression;
use nirsim::Error;
use proptest::prelude::*;

fn unit() -> ModelParams {
    ModelParams::default().with_e(1.0)
}

#[test]
fn momentum_and_position_forms_agree_on_grid() {
    let p = unit();
    for i in 0..20 {
        for j in 0..20 {
            let r = 0.3 * i as f64;
            let t = 0.3 * j as f64;
            let a = pair_kernel_momentum(r, t, &p).unwrap();
            let b = pair_kernel_position(r, t, &p).unwrap();
            assert!(((a - b) / b).abs() < 1e-6, "r={r} t={t}: {a} vs {b}");
        }
    }
    assert!((pair_kernel_momentum(0.0, 0.0, &p).unwrap() + PI / 4.0).abs() < 1e-8);
}

#[test]
fn origin_value_matches_independent_quadrature() {
    // -(4π/8) ∫ k e^{-k²} dk by plain midpoint sums on [0, 12]
    let n = 200_000;
    let h = 12.0 / n as f64;
    let sum: f64 = (0..n)
        .map(|i| {
            let k = (i as f64 + 0.5) * h;
            k * (-k * k).exp()
        })
        .sum();
    let oracle = -0.5 * PI * sum * h;
    assert!((pair_kernel_momentum(0.0, 0.0, &unit()).unwrap() - oracle).abs() < 1e-8);
}

#[test]
fn w_is_nonpositive_in_three_dimensions() {
    let p = ModelParams::default();
    for i in 0..100 {
        for j in 0..100 {
            let r = 0.12 * i as f64;
            let t = 0.25 * j as f64;
            let w = pair_kernel_momentum(r, t, &p).unwrap();
            assert!(w <= 0.0, "W({r}, {t}) = {w}");
        }
    }
}

#[test]
fn ir_slope_is_four_pi_e_squared() {
    let e = 0.7;
    let p = unit().with_e(e);
    let eps: Vec<f64> = (2..=6).map(|n| 10f64.powi(-n)).collect();
    let scan = ir_criterion_scan(&eps, &p).unwrap();
    let x: Vec<f64> = eps.iter().map(|e| (1.0 / e).ln()).collect();
    let y: Vec<f64> = scan.iter().map(|s| s.1).collect();
    let fit = linear_regression(&x, &y).unwrap();
    let target = 4.0 * PI * e * e;
    assert!(((fit.slope - target) / target).abs() < 0.02, "{fit:?}");
    assert!(fit.r2 > 0.999);
}

#[test]
fn ir_integral_converges_in_four_dimensions() {
    let p = unit().with_d(4);
    let scan = ir_criterion_scan(&[1e-3, 1e-4, 1e-5, 1e-6], &p).unwrap();
    let base = scan[0].1;
    let inc: Vec<f64> = scan.windows(2).map(|w| w[1].1 - w[0].1).collect();
    for w in inc.windows(2) {
        // the integrand k^{d-4} e^{-σ²k²} tends to a constant, so increments shrink tenfold
        assert!(w[1] > 0.0 && w[1] < 0.11 * w[0], "{inc:?}");
    }
    assert!(inc[inc.len() - 1] < 1e-3 * base, "{inc:?} vs {base}");
}

/// `‖s‖²` from the defining double integral, with `φ` computed in the time
/// variable `s = k t` and the outer integral in `L = -ln k`.
fn s_norm_oracle(test: &IrTestFunction) -> f64 {
    let tol = Tolerance {
        abs: 1e-300,
        rel: 1e-11,
        max_intervals: 5000,
    };
    let phi_k = |l: f64| -> f64 {
        // k φ(k) = ∫_{k T*}^∞ e^{-s} / (ln(s/k) (ln ln(s/k))^ζ) ds with ln(s/k) = ln s + L
        let lo = (-l).exp() * test.t_star;
        integrate(
            |s: f64| {
                let lt = s.ln() + l;
                (-s).exp() / (lt * lt.ln().powf(test.zeta))
            },
            lo,
            lo + 60.0,
            &[lo + 1e-6, lo + 1e-3, lo + 0.5, lo + 2.0, lo + 8.0],
            tol,
        )
        .unwrap()
        .value
    };
    let l_star = -test.k_star.ln();
    let l_max = 1e6;
    // in d = 3 the outer integrand is (kφ)² / ρ̂² dL
    let outer = |l: f64| {
        let k = (-l).exp();
        let v = phi_k(l) / (test.ref_charge * (-0.5 * k * k).exp());
        v * v
    };
    let breaks: Vec<f64> = (1..12)
        .map(|j| l_star + 10f64.powf(j as f64 * 0.5) - 1.0)
        .collect();
    let body = integrate(outer, l_star, l_max, &breaks, tol).unwrap().value;
    // beyond L_max, kφ ≈ 1/(L (ln L)^ζ)
    let tail = 1.0 / (l_max * l_max.ln().powf(2.0 * test.zeta));
    4.0 * PI * (body + tail)
}

#[test]
fn s_norm_matches_double_quadrature() {
    let p = unit();
    let test = IrTestFunction {
        t_star: std::f64::consts::E.powi(2),
        zeta: 0.5,
        k_star: 0.5,
        ref_charge: 1.0,
    };
    let fast = s_norm_sq(&test, &p).unwrap();
    let oracle = s_norm_oracle(&test);
    assert!(
        ((fast - oracle) / oracle).abs() < 1e-4,
        "{fast} vs {oracle}"
    );
}

#[test]
fn s_hat_vanishes_outside_support() {
    let p = unit();
    let test = IrTestFunction::default_for(&p);
    for k in [0.5, 0.50001, 1.0, 7.0, 100.0] {
        assert_eq!(s_hat(k, &test, &p).unwrap(), 0.0);
    }
}

#[test]
fn table_reproduces_nodes_and_midpoints() {
    let p = ModelParams::default();
    let table = KernelTable::build(&p, 4.0, 16.0, DEFAULT_TABLE_RESOLUTION).unwrap();
    let (rg, tg) = (table.r_grid().to_vec(), table.t_grid().to_vec());
    for i in (0..rg.len()).step_by(7) {
        for j in (0..tg.len()).step_by(5) {
            assert_eq!(
                table.interpolate(rg[i], tg[j]).unwrap(),
                table.node_value(i, j)
            );
        }
    }
    for i in (0..rg.len() - 1).step_by(11) {
        for j in (0..tg.len() - 1).step_by(9) {
            let r = 0.5 * (rg[i] + rg[i + 1]);
            let t = 0.5 * (tg[j] + tg[j + 1]);
            let exact = pair_kernel_momentum(r, t, &p).unwrap();
            let err = (table.interpolate(r, t).unwrap() - exact).abs();
            assert!(
                err <= TABLE_TOLERANCE * exact.abs().max(1e-6),
                "r={r} t={t}: {err:e}"
            );
        }
    }
    assert!(table.interpolate(5.0, 1.0).is_none());
    // outside the table the slow path agrees with quadrature
    assert_eq!(
        table.w(5.0, 1.0),
        pair_kernel_momentum(5.0, 1.0, &p).unwrap()
    );
}

#[test]
fn zero_charge_table_is_zero() {
    let table = KernelTable::build(&ModelParams::default().with_e(0.0), 3.0, 3.0, 0.05).unwrap();
    for i in 0..table.r_grid().len() {
        for j in 0..table.t_grid().len() {
            assert_eq!(table.node_value(i, j), 0.0);
        }
    }
}

#[test]
fn coarse_table_is_refused_with_measured_error() {
    let err = KernelTable::build(&ModelParams::default().with_d(4), 8.0, 8.0, 0.5).unwrap_err();
    match err {
        Error::TableResolution { max_error, tol, .. } => assert!(max_error > tol),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn table_file_round_trip() {
    let table = KernelTable::build(&ModelParams::default(), 2.0, 4.0, 0.05).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("w.nirk");
    table.save(&file).unwrap();
    let back = KernelTable::load(&file).unwrap();
    assert_eq!(back.r_grid(), table.r_grid());
    assert_eq!(back.t_grid(), table.t_grid());
    assert_eq!(back.params(), table.params());
    assert_eq!(
        back.interpolate(1.234, 2.345),
        table.interpolate(1.234, 2.345)
    );
    std::fs::write(&file, b"garbage").unwrap();
    assert!(matches!(
        KernelTable::load(&file),
        Err(Error::Format { .. })
    ));
}

#[test]
fn covariance_matches_closed_form_in_four_dimensions() {
    // (1/4)|S³| ∫ k² e^{-k²} dk = (1/4) 2π² √π/4
    let h = FormFactor::gaussian(1.0);
    let c = field_covariance(&h, &h, 0.0, &unit().with_d(4)).unwrap();
    let expect = 0.25 * 2.0 * PI * PI * PI.sqrt() / 4.0;
    assert!((c - expect).abs() < 1e-11);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn w_scales_as_charge_squared(r in 0.0f64..8.0, t in 0.0f64..8.0, e in 0.01f64..2.0, d in 3usize..=5) {
        let p = ModelParams::default().with_d(d);
        let a = pair_kernel_momentum(r, t, &p.with_e(e)).unwrap();
        let b = pair_kernel_momentum(r, t, &p.with_e(2.0 * e)).unwrap();
        prop_assert_eq!(b, 4.0 * a);
    }

    #[test]
    fn w_is_even_in_time(r in 0.0f64..8.0, t in 0.0f64..8.0) {
        let p = ModelParams::default();
        prop_assert_eq!(pair_kernel_momentum(r, t, &p).unwrap(), pair_kernel_momentum(r, -t, &p).unwrap());
    }

    #[test]
    fn covariance_gram_is_psd(t in proptest::collection::vec(0.0f64..6.0, 5), w in 0.3f64..2.0) {
        let h = FormFactor::gaussian(w);
        let p = ModelParams::default();
        let m = nalgebra::DMatrix::from_fn(5, 5, |i, j| field_covariance(&h, &h, t[i] - t[j], &p).unwrap());
        let eig = m.symmetric_eigen();
        prop_assert!(eig.eigenvalues.iter().all(|&l| l > -1e-10));
    }
}
