use std::f64::consts::PI;

use nirsim::field::{
    density_log_vs_free, g_hat, g_hat0, g_hat_lipschitz, m_hat, product_weights,
    sample_field_at_times, FieldSampleSpec, ModeGrid, SingularityFunctional,
};
use nirsim::kernels::{
    field_covariance, pair_kernel_momentum, rho_hat, FormFactor, IrTestFunction, ModelParams,
};
use nirsim::path::{DiscretizedPath, PathConfig};
use nirsim::quadrature::{integrate, Tolerance};
use nirsim::stats::Estimate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn params() -> ModelParams {
    ModelParams::default()
}

fn random_path(cfg: &PathConfig, rng: &mut ChaCha8Rng) -> DiscretizedPath {
    let scale: f64 = rng.random_range(0.1..3.0);
    let mut q: Vec<f64> = (0..cfg.d).map(|_| rng.random_range(-2.0..2.0)).collect();
    DiscretizedPath::from_fn(cfg.n_beads(), cfg.d, |_| {
        for x in q.iter_mut() {
            *x += scale * cfg.dt.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        q.clone()
    })
}

fn random_k(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mag = 10f64.powf(rng.random_range(-3.0..1.0));
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x * mag / n).collect()
}

#[test]
fn resting_path_mean_has_closed_form() {
    let p = params();
    let cfg = PathConfig::new(4.0, 0.1, 3).unwrap();
    let path = DiscretizedPath::zeros(cfg.n_beads(), 3);
    for &k in &[0.01, 0.3, 1.0, 5.0] {
        let g = g_hat0(&[0.0, k, 0.0], &path, &cfg, &p).unwrap();
        let exact = -rho_hat(k, &p) / (4.0 * k) * (2.0 / k) * (1.0 - (-k * 4.0).exp());
        assert!(
            (g.re - exact).abs() < 1e-12 * exact.abs() && g.im.abs() < 1e-15,
            "k={k}"
        );
    }
}

#[test]
fn conditional_mean_bound_holds_at_random_probes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..1000 {
        let d = if trial % 2 == 0 { 3 } else { 4 };
        let p = params().with_d(d);
        let t = [1.0, 2.0, 4.0][trial % 3];
        let dt = [0.05, 0.25, 0.5][(trial / 3) % 3];
        let cfg = PathConfig::new(t, dt, d).unwrap();
        let path = random_path(&cfg, &mut rng);
        let k = random_k(d, &mut rng);
        let kk = k.iter().map(|x| x * x).sum::<f64>().sqrt();
        let center = rng.random_range(0..cfg.n_beads());
        let g = g_hat(&k, center, &path, &cfg, &p).unwrap();
        assert!(
            g.norm() <= rho_hat(kk, &p) / (2.0 * kk * kk),
            "trial {trial}"
        );
        let m = m_hat(&k, &path, &cfg, &p).unwrap();
        assert!(m.norm() <= 2.0 * rho_hat(kk, &p) / kk * (1.0 + 1e-12));
        let g0 = g_hat0(&k, &path, &cfg, &p).unwrap();
        assert!((m - 4.0 * kk * g0).norm() <= 1e-15 * m.norm());
    }
}

#[test]
fn zero_coupling_and_zero_wavevector() {
    let cfg = PathConfig::new(1.0, 0.25, 3).unwrap();
    let path = DiscretizedPath::from_fn(cfg.n_beads(), 3, |i| vec![i as f64 * 0.1, 0.0, 0.3]);
    assert_eq!(
        g_hat0(&[0.3, 0.1, 0.0], &path, &cfg, &params().with_e(0.0))
            .unwrap()
            .norm(),
        0.0
    );
    assert!(g_hat0(&[0.0; 3], &path, &cfg, &params()).is_err());
}

#[test]
fn long_window_limit_of_m_hat() {
    let p = params();
    let cfg = PathConfig::new(64.0, 0.25, 3).unwrap();
    let path = DiscretizedPath::zeros(cfg.n_beads(), 3);
    for &k in &[0.5, 1.0, 2.0] {
        let m = m_hat(&[k, 0.0, 0.0], &path, &cfg, &p).unwrap();
        let limit = -2.0 * rho_hat(k, &p) / k;
        assert!((m.re - limit).abs() < 1e-12 * limit.abs());
    }
}

#[test]
fn window_convergence_matches_exponential_envelope() {
    let p = params();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for &t in &[2.0, 4.0] {
        let c1 = PathConfig::new(t, 0.25, 3).unwrap();
        let c2 = PathConfig::new(2.0 * t, 0.25, 3).unwrap();
        let p1 = DiscretizedPath::zeros(c1.n_beads(), 3);
        let p2 = DiscretizedPath::zeros(c2.n_beads(), 3);
        for _ in 0..100 {
            let k = random_k(3, &mut rng);
            let kk = k.iter().map(|x| x * x).sum::<f64>().sqrt();
            let (g2, g1) = (
                g_hat0(&k, &p2, &c2, &p).unwrap(),
                g_hat0(&k, &p1, &c1, &p).unwrap(),
            );
            let diff = (g2 - g1).norm();
            let env = rho_hat(kk, &p) / (2.0 * kk * kk) * (-kk * t).exp();
            assert!(
                diff <= env * (1.0 + 1e-12) + 1e-14 * g2.norm(),
                "k={kk}: {diff} vs {env}"
            );
            // for a resting path the gap is exactly env · (1 - e^{-kT})
            let exact = env * (1.0 - (-kk * t).exp());
            assert!(
                (diff - exact).abs() <= 1e-10 * env + 1e-14 * g2.norm(),
                "k={kk}: {diff} vs {exact}, env {env}"
            );
        }
    }
}

#[test]
fn lipschitz_constant_is_finite() {
    let p = params();
    let cfg = PathConfig::new(2.0, 0.05, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let path = random_path(&cfg, &mut rng);
    for k in [[0.1, 0.0, 0.0], [0.5, 0.5, 0.0], [2.0, -1.0, 1.0]] {
        let c = g_hat_lipschitz(&k, &path, &cfg, &p).unwrap();
        assert!(c.is_finite() && c > 0.0);
    }
}

/// `∫ ŝ ĝ⁰_T dk` for `q ≡ 0`, from the `(s, t)` double integral after the
/// k-integral `∫_0^{k*} k e^{-ka} dk = (1 - e^{-k* a}(1 + k* a))/a²`.
fn resting_overlap_oracle(test: &IrTestFunction, p: &ModelParams, t_half: f64) -> f64 {
    let tol = Tolerance {
        abs: 1e-300,
        rel: 1e-10,
        max_intervals: 5000,
    };
    let w = |t: f64| 1.0 / (t.ln() * t.ln().ln().powf(test.zeta));
    let inner = |s: f64| {
        let f = |t: f64| {
            let a = s + t;
            let x = test.k_star * a;
            w(t) * (-(-x).exp_m1() - x * (-x).exp()) / (a * a)
        };
        let lo = test.t_star;
        let breaks: Vec<f64> = (1..8).map(|j| lo * 10f64.powi(j)).collect();
        integrate(f, lo, lo * 1e9, &breaks, tol).unwrap().value
    };
    let total = 2.0 * integrate(inner, 0.0, t_half, &[], tol).unwrap().value;
    -PI * p.e / test.ref_charge * total
}

#[test]
fn resting_path_functional_matches_oracle() {
    let p = params();
    let test = IrTestFunction::default_for(&p);
    let cfg = PathConfig::new(8.0, 0.25, 3).unwrap();
    let sf = SingularityFunctional::new(&test, &p, &cfg).unwrap();
    let path = DiscretizedPath::zeros(cfg.n_beads(), 3);
    let fast = sf.expectation(&path).unwrap();
    let oracle = (resting_overlap_oracle(&test, &p, 8.0) + sf.s_norm_sq() / 8.0).exp();
    assert!(
        ((fast - oracle) / oracle).abs() < 1e-3,
        "{fast} vs {oracle}"
    );
}

#[test]
fn resting_path_functional_decreases_with_window() {
    let p = params();
    let test = IrTestFunction::default_for(&p);
    let mut prev = f64::INFINITY;
    for t in [4.0, 8.0, 16.0, 32.0] {
        let cfg = PathConfig::new(t, 0.25, 3).unwrap();
        let sf = SingularityFunctional::new(&test, &p, &cfg).unwrap();
        let v = sf
            .expectation(&DiscretizedPath::zeros(cfg.n_beads(), 3))
            .unwrap();
        assert!(v < prev, "T={t}: {v} !< {prev}");
        assert!(v <= sf.baseline());
        prev = v;
    }
}

#[test]
fn uncoupled_functional_is_baseline() {
    let p = params().with_e(0.0);
    let test = IrTestFunction::default_for(&p);
    let cfg = PathConfig::new(4.0, 0.25, 3).unwrap();
    let sf = SingularityFunctional::new(&test, &p, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let path = random_path(&cfg, &mut rng);
    assert_eq!(sf.expectation(&path).unwrap(), sf.baseline());
    assert_eq!(sf.baseline(), (sf.s_norm_sq() / 8.0).exp());
}

#[test]
fn functional_is_bounded_over_paths() {
    let p = params();
    let test = IrTestFunction::default_for(&p);
    let cfg = PathConfig::new(4.0, 0.25, 3).unwrap();
    let sf = SingularityFunctional::new(&test, &p, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let path = random_path(&cfg, &mut rng);
        let v = sf.expectation(&path).unwrap();
        assert!(v > 0.0 && v <= sf.baseline() * (1.0 + 1e-12));
        assert_eq!(sf.capped(&path, 0.5 * v).unwrap(), 0.5 * v);
    }
}

fn spec(grid: Option<ModeGrid>) -> FieldSampleSpec {
    FieldSampleSpec {
        tests: vec![FormFactor::gaussian(1.0), FormFactor::gaussian(0.5)],
        times: vec![0.0, 0.5, 1.5],
        grid,
    }
}

#[test]
fn free_field_samples_have_zero_mean_and_exact_covariance() {
    let p = params();
    let cfg = PathConfig::new(2.0, 0.25, 3).unwrap();
    let s = spec(None);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100_000;
    let draws = sample_field_at_times(&s, None, &cfg, &p, n, &mut rng).unwrap();
    let dim = s.labels().len();
    let entries: Vec<(FormFactor, f64)> = s
        .tests
        .iter()
        .flat_map(|h| s.times.iter().map(move |&t| (*h, t)))
        .collect();
    for a in 0..dim {
        let xs: Vec<f64> = draws.iter().map(|v| v[a]).collect();
        let e = Estimate::from_series(&xs).unwrap();
        assert!(e.mean.abs() < 4.0 * e.stderr, "mean {a}: {e:?}");
        for b in a..dim {
            let exact = field_covariance(
                &entries[a].0,
                &entries[b].0,
                entries[a].1 - entries[b].1,
                &p,
            )
            .unwrap();
            let caa = field_covariance(&entries[a].0, &entries[a].0, 0.0, &p).unwrap();
            let cbb = field_covariance(&entries[b].0, &entries[b].0, 0.0, &p).unwrap();
            let emp = draws.iter().map(|v| v[a] * v[b]).sum::<f64>() / n as f64;
            let se = ((caa * cbb + exact * exact) / n as f64).sqrt();
            assert!(
                (emp - exact).abs() < 4.0 * se,
                "cov {a},{b}: {emp} vs {exact}"
            );
        }
    }
}

#[test]
fn conditional_samples_have_analytic_mean_for_resting_path() {
    let p = params();
    let cfg = PathConfig::new(2.0, 0.25, 3).unwrap();
    let path = DiscretizedPath::zeros(cfg.n_beads(), 3);
    let s = spec(None);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 50_000;
    let draws = sample_field_at_times(&s, Some(&path), &cfg, &p, n, &mut rng).unwrap();
    let mut col = 0;
    for h in &s.tests {
        for &t in &s.times {
            // -(4π/4) ∫ k ĥ ρ̂ (∫ e^{-k|t-τ|} dτ) dk
            let tau = |k: f64| -((-k * (2.0 - t)).exp_m1() + (-k * (2.0 + t)).exp_m1()) / k;
            let exact = -PI
                * integrate(
                    |k| k * h.eval(k) * rho_hat(k, &p) * tau(k),
                    0.0,
                    30.0,
                    &[0.5, 1.0, 2.0, 4.0],
                    Tolerance::new(1e-300, 1e-12),
                )
                .unwrap()
                .value;
            let xs: Vec<f64> = draws.iter().map(|v| v[col]).collect();
            let e = Estimate::from_series(&xs).unwrap();
            assert!(
                (e.mean - exact).abs() < 4.0 * e.stderr,
                "{col}: {e:?} vs {exact}"
            );
            let means = s.mean(Some(&path), &cfg, &p).unwrap();
            assert!((means[col] - exact).abs() < 1e-9 * exact.abs());
            col += 1;
        }
    }
}

#[test]
fn off_grid_times_are_rejected() {
    let p = params();
    let cfg = PathConfig::new(2.0, 0.25, 3).unwrap();
    let path = DiscretizedPath::zeros(cfg.n_beads(), 3);
    let mut s = spec(None);
    s.times = vec![0.1];
    assert!(s.mean(Some(&path), &cfg, &p).is_err());
}

#[test]
fn mode_grid_covariance_converges_quadratically() {
    let p = params();
    let h = FormFactor::gaussian(1.0);
    let exact = field_covariance(&h, &h, 0.5, &p).unwrap();
    let err =
        |n: usize| (ModeGrid::new(8.0, n, 4, 4).unwrap().covariance(&h, &h, 0.5) - exact).abs();
    let (e1, e2, e3) = (err(20), err(40), err(80));
    for ratio in [e1 / e2, e2 / e3] {
        assert!(ratio > 3.5 && ratio < 4.5, "{e1:e} {e2:e} {e3:e}");
    }
}

#[test]
fn mode_grid_covariance_drives_sampler() {
    let p = params();
    let cfg = PathConfig::new(2.0, 0.25, 3).unwrap();
    let grid = ModeGrid::new(8.0, 80, 4, 4).unwrap();
    let with_grid = spec(Some(grid)).covariance(&p).unwrap();
    let exact = spec(None).covariance(&p).unwrap();
    assert!((with_grid - &exact).abs().max() < 1e-3 * exact.max());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert_eq!(
        sample_field_at_times(&spec(None), None, &cfg, &p, 3, &mut rng)
            .unwrap()
            .len(),
        3
    );
}

#[test]
fn density_vanishes_without_coupling() {
    let p = params().with_e(0.0);
    let cfg = PathConfig::new(1.0, 0.25, 3).unwrap();
    let grid = ModeGrid::new(6.0, 10, 3, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let path = random_path(&cfg, &mut rng);
    let xi = grid.sample(&mut rng);
    assert_eq!(
        density_log_vs_free(&xi, &grid, &path, &cfg, &p).unwrap(),
        0.0
    );
    let other = ModeGrid::new(6.0, 11, 3, 4).unwrap();
    assert!(density_log_vs_free(&xi, &other, &path, &cfg, &p).is_err());
}

#[test]
fn density_is_normalized_under_free_field() {
    let p = params().with_e(0.5);
    let cfg = PathConfig::new(1.0, 0.25, 3).unwrap();
    let grid = ModeGrid::new(6.0, 30, 4, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let path = random_path(&cfg, &mut rng);
    let g = grid.g_hat0(&path, &cfg, &p).unwrap();
    let quad = grid.quadratic_term(&g);
    let vals: Vec<f64> = (0..20_000)
        .map(|_| {
            let xi = grid.sample(&mut rng);
            (grid.linear_term(&xi, &g).unwrap() - quad).exp()
        })
        .collect();
    let e = Estimate::from_series(&vals).unwrap();
    assert!((e.mean - 1.0).abs() < 4.0 * e.stderr, "{e:?}");
}

#[test]
fn quadratic_term_is_half_the_linear_variance() {
    // ½ Var ∫ξ m_T = (1/8) ∫ |m̂|²/|k| dk = -Σ_i Σ_j w_i w_j W(|q_i - q_j|, |τ_i| + |τ_j|)
    let p = params().with_e(1.0);
    let cfg = PathConfig::new(1.0, 0.05, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let path = random_path(&cfg, &mut rng);
    let grid = ModeGrid::new(8.0, 200, 12, 24).unwrap();
    let quad = grid.quadratic_term(&grid.g_hat0(&path, &cfg, &p).unwrap());
    let n = cfg.n_beads();
    let mut oracle = 0.0;
    for i in 0..n {
        for j in 0..n {
            let r = path
                .bead(i)
                .iter()
                .zip(path.bead(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let t = cfg.time(i).abs() + cfg.time(j).abs();
            oracle -= cfg.weight(i) * cfg.weight(j) * pair_kernel_momentum(r, t, &p).unwrap();
        }
    }
    assert!(
        ((quad - oracle) / oracle).abs() < 1e-3,
        "{quad} vs {oracle}"
    );
}

#[test]
fn weights_are_exported_consistently() {
    let cfg = PathConfig::new(1.0, 0.25, 3).unwrap();
    let w = product_weights(0.7, cfg.mid(), &cfg);
    assert_eq!(w.len(), cfg.n_beads());
    // symmetric around t = 0
    for i in 0..w.len() {
        assert!((w[i] - w[w.len() - 1 - i]).abs() < 1e-15);
    }
}
