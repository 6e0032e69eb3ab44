//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The process fails when a criterion fails that is not listed in
//! `KNOWN_FAILURES`; a listed criterion that passes is reported as such.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nirsim::config::RunConfig;
use nirsim::error::Result;
use nirsim::experiment::{run_experiment, ExperimentReport, EXPERIMENTS};
use nirsim::field::{g_hat, g_hat0, m_hat};
use nirsim::kernels::{rho_hat, KernelTable, ModelParams};
use nirsim::path::lattice::{total_variation, LatticeToy};
use nirsim::path::{
    merge_estimates, run_chains, ChainSetup, DiscretizedPath, McmcConfig, Observable, PathConfig,
};
use nirsim::schrodinger::{solve_ground_state, GridSpec, PotentialSpec};
use nirsim::stats::Estimate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Criteria expected to fail, with the reason.
const KNOWN_FAILURES: &[(&str, &str)] = &[
    (
        "6",
        "the Jensen bound approaches its positive limit like 1/T; at this sample size the drift exceeds 4 stderr",
    ),
    (
        "8b",
        "L1 is integrable for d >= 3, so L1*L1*L2 decays like L2 (exponent gamma), not 2d+gamma-4",
    ),
];

/// Sampler budget of the Monte Carlo criteria.
const MCMC: &str =
    "dt = 0.25\nT = 4\nchains = 4\nsteps = 5000\nburn_in = 500\nthin = 1\nseed = 1\n";

struct Outcome {
    id: &'static str,
    title: &'static str,
    passed: bool,
    detail: String,
}

fn config(text: &str, dir: &Path) -> RunConfig {
    RunConfig::parse(&format!("{text}output_dir = {}\n", dir.display()))
        .expect("acceptance config is valid")
}

fn check(report: &ExperimentReport, name: &str) -> (bool, String) {
    match report.check(name) {
        Some(c) => (c.passed, format!("{}: {}", c.name, c.detail)),
        None => (false, format!("{name}: missing from report")),
    }
}

fn all(parts: &[(bool, String)]) -> (bool, String) {
    (
        parts.iter().all(|p| p.0),
        parts
            .iter()
            .map(|p| p.1.as_str())
            .collect::<Vec<_>>()
            .join("; "),
    )
}

fn c1(dir: &Path) -> Result<(bool, String)> {
    let r = run_experiment(&config("e = 1\nT = 1\n", dir), "kernels")?;
    Ok(all(&[
        check(&r, "cross_representation"),
        check(&r, "origin_value"),
    ]))
}

fn c2(dir: &Path) -> Result<(bool, String)> {
    let r3 = run_experiment(&config("", &dir.join("d3")), "ir-scan")?;
    let r4 = run_experiment(&config("d = 4\nT_list = 8\n", &dir.join("d4")), "ir-scan")?;
    Ok(all(&[check(&r3, "log_slope"), check(&r4, "converges")]))
}

struct Moments;

impl Observable for Moments {
    fn names(&self) -> Vec<String> {
        vec!["q0_sq".into(), "q0_dot_q1".into()]
    }

    fn eval(&self, path: &DiscretizedPath, cfg: &PathConfig, out: &mut Vec<f64>) -> Result<()> {
        let m = cfg.mid();
        let lag = (1.0 / cfg.dt).round() as usize;
        let (a, b) = (path.bead(m), path.bead(m + lag));
        out.push(a.iter().map(|x| x * x).sum());
        out.push(a.iter().zip(b).map(|(x, y)| x * y).sum());
        Ok(())
    }
}

fn c3() -> Result<(bool, String)> {
    let quartic = solve_ground_state(&PotentialSpec::new(1.0, 2.0)?, 3, GridSpec::default())?;
    let tab = KernelTable::build(&ModelParams::default().with_e(1.0), 4.0, 3.0, 0.02)?;
    let toy = LatticeToy::new(&quartic, &tab, 0.5, 0.4)?;
    let exact = toy.enumerate()?;
    let tv = total_variation(&exact, &toy.run(2_000_000, 17).frequencies());

    // e = 0, V = |q|²/2: stationary OU with E|q₀|² = 3/2, E[q₀·q₁] = (3/2)e^{-1}
    let harmonic = solve_ground_state(&PotentialSpec::new(0.5, 1.0)?, 3, GridSpec::default())?;
    let free = KernelTable::build(&ModelParams::default().with_e(0.0), 1.0, 1.0, 0.02)?;
    let setup = ChainSetup {
        cfg: PathConfig::new(4.0, 0.05, 3)?,
        mcmc: McmcConfig {
            burn_in: 200,
            steps: 3000,
            thin: 2,
            chains: 4,
            seed: 7,
            resync_interval: 50,
        },
        gs: &harmonic,
        table: &free,
        config_hash: 0,
    };
    let est = merge_estimates(&run_chains(&setup, &Moments, None)?)?;
    let get = |n: &str| -> Estimate { est.iter().find(|(k, _)| k == n).expect("observable").1 };
    let (q2, c) = (get("q0_sq"), get("q0_dot_q1"));
    let c_exact = 1.5 * (-1f64).exp();
    let z2 = (q2.mean - 1.5).abs() / q2.stderr;
    let zc = (c.mean - c_exact).abs() / c.stderr;
    Ok((
        tv < 1e-2 && z2 < 4.0 && zc < 4.0,
        format!(
            "lattice TV {tv:.2e} (< 1e-2); E|q0|^2 = {:.4} ± {:.4} vs 1.5 (z {z2:.2}); \
             lag-1 autocov {:.4} ± {:.4} vs {c_exact:.4} (z {zc:.2})",
            q2.mean, q2.stderr, c.mean, c.stderr
        ),
    ))
}

fn c9() -> Result<(bool, String)> {
    let p = ModelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let random_k = |d: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mag = 10f64.powf(rng.random_range(-3.0..1.0));
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x * mag / n).collect()
    };
    let mut violations = 0;
    for trial in 0..1000 {
        let d = 3 + trial % 2;
        let params = p.with_d(d);
        let cfg = PathConfig::new(
            [1.0, 2.0, 4.0][trial % 3],
            [0.05, 0.25, 0.5][(trial / 3) % 3],
            d,
        )?;
        let scale: f64 = rng.random_range(0.1..3.0);
        let mut q: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let path = DiscretizedPath::from_fn(cfg.n_beads(), d, |_| {
            for x in q.iter_mut() {
                *x += scale * cfg.dt.sqrt() * rng.sample::<f64, _>(StandardNormal);
            }
            q.clone()
        });
        let k = random_k(d, &mut rng);
        let kk = k.iter().map(|x| x * x).sum::<f64>().sqrt();
        let center = rng.random_range(0..cfg.n_beads());
        let g = g_hat(&k, center, &path, &cfg, &params)?;
        let m = m_hat(&k, &path, &cfg, &params)?;
        let bound = rho_hat(kk, &params) / (2.0 * kk * kk);
        if g.norm() > bound || m.norm() > 2.0 * rho_hat(kk, &params) / kk * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    // resting path: |ĝ_{2T} - ĝ_T| = ρ̂/(2k²) e^{-kT} (1 - e^{-kT}) exactly
    let mut worst: f64 = 0.0;
    let mut off = 0;
    let t = 4.0;
    let (c1, c2) = (
        PathConfig::new(t, 0.25, 3)?,
        PathConfig::new(2.0 * t, 0.25, 3)?,
    );
    let (p1, p2) = (
        DiscretizedPath::zeros(c1.n_beads(), 3),
        DiscretizedPath::zeros(c2.n_beads(), 3),
    );
    for _ in 0..100 {
        let k = random_k(3, &mut rng);
        let kk = k.iter().map(|x| x * x).sum::<f64>().sqrt();
        let g2 = g_hat0(&k, &p2, &c2, &p)?;
        let diff = (g2 - g_hat0(&k, &p1, &c1, &p)?).norm();
        let env = rho_hat(kk, &p) / (2.0 * kk * kk) * (-kk * t).exp();
        let dev = (diff - env * (1.0 - (-kk * t).exp())).abs();
        // rounding in ĝ itself floors the attainable accuracy when the envelope is tiny
        if dev > 1e-10 * env + 1e-14 * g2.norm() {
            off += 1;
        }
        if env > 1e-6 * g2.norm() {
            worst = worst.max(dev / env);
        }
    }
    Ok((
        violations == 0 && off == 0,
        format!(
            "{violations} bound violations at 1000 probes; window gap off the exact envelope at {off} of 100 k \
             (worst relative deviation {worst:.2e})"
        ),
    ))
}

/// Every experiment, twice from scratch, compared file by file.
fn c10(dir: &Path) -> Result<(bool, String)> {
    let small = "T = 1\ndt = 0.25\nT_list = 0.5, 1\nsteps = 5000\nburn_in = 50\nthin = 1\nchains = 2\nseed = 3\n\
                 lags = 0.25, 0.5, 1\n";
    let mut compared = 0;
    let mut differing = Vec::new();
    for name in EXPERIMENTS {
        let extra = if name == "convergence" { "d = 4\n" } else { "" };
        let text = format!("{small}{extra}");
        let a = run_experiment(&config(&text, &dir.join("a")), name)?;
        run_experiment(&config(&text, &dir.join("b")), name)?;
        for f in a.files.iter().filter(|f| f.ends_with(".csv")) {
            let read = |side: &str| fs::read(dir.join(side).join(name).join(f)).unwrap_or_default();
            compared += 1;
            if read("a") != read("b") {
                differing.push(format!("{name}/{f}"));
            }
        }
    }
    Ok((
        differing.is_empty() && compared >= EXPERIMENTS.len(),
        format!(
            "{compared} CSV files compared across {} experiments; differing: {differing:?}",
            EXPERIMENTS.len()
        ),
    ))
}

fn run_all(root: &Path) -> Vec<Outcome> {
    let mut out = Vec::new();
    let mut record = |id, title, r: Result<(bool, String)>, started: Instant| {
        let (passed, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
        let detail = format!("{detail} [{:.0} s]", started.elapsed().as_secs_f64());
        out.push(Outcome {
            id,
            title,
            passed,
            detail,
        });
    };

    let s = Instant::now();
    record("1", "kernel cross-representation", c1(&root.join("c1")), s);
    let s = Instant::now();
    record("2", "infrared criterion", c2(&root.join("c2")), s);
    let s = Instant::now();
    record("3", "exact-law MCMC oracles", c3(), s);

    let d3 = config(&format!("{MCMC}T_list = 4, 8, 16, 32\n"), &root.join("d3"));
    let s = Instant::now();
    let div = run_experiment(&d3, "divergence");
    let t_div = s;
    match &div {
        Ok(r) => {
            record(
                "4",
                "divergence of the capped functional (d=3)",
                Ok(all(&[
                    check(r, "capped_strictly_decreasing"),
                    check(r, "capped_decay_factor"),
                    check(r, "cap_insensitive"),
                ])),
                t_div,
            );
            record(
                "5",
                "overlap upper bound decreases (d=3)",
                Ok(all(&[
                    check(r, "overlap_at_most_one"),
                    check(r, "overlap_strictly_decreasing"),
                    check(r, "overlap_log_slope_negative"),
                ])),
                t_div,
            );
        }
        Err(e) => {
            record(
                "4",
                "divergence of the capped functional (d=3)",
                Err(clone(e)),
                t_div,
            );
            record(
                "5",
                "overlap upper bound decreases (d=3)",
                Err(clone(e)),
                t_div,
            );
        }
    }

    let d4 = config(
        &format!("{MCMC}d = 4\nT_list = 4, 8, 16\n"),
        &root.join("d4"),
    );
    let s = Instant::now();
    let conv = run_experiment(&d4, "convergence").map(|r| {
        let (ok, detail) = all(&[
            check(&r, "positive"),
            check(&r, "flat"),
            check(&r, "above_analytic"),
        ]);
        let lim = &r.summary["inverse_t_extrapolation"];
        (
            ok,
            format!(
                "{detail}; 1/T extrapolation b_inf = {} (c = {})",
                lim["b_inf"], lim["c"]
            ),
        )
    });
    record("6", "Jensen lower bound stays positive (d=4)", conv, s);

    let s = Instant::now();
    let loc = run_experiment(&d3, "localization").map(|r| {
        let band = |t: f64| {
            r.summary["per_T"]
                .as_array()
                .and_then(|a| a.iter().find(|p| p["T"].as_f64() == Some(t)))
                .map(|p| p["c"].as_f64().unwrap_or(f64::NAN))
                .unwrap_or(f64::NAN)
        };
        let (ok, detail) = all(&[
            check(&r, "bins_populated_T8"),
            check(&r, "bins_populated_T16"),
            check(&r, "uniform_T8_T16"),
        ]);
        let (c8, c16) = (band(8.0), band(16.0));
        (
            ok && c8.is_finite() && c16.is_finite(),
            format!("{detail}; band constant c = {c8:.3} at T=8, {c16:.3} at T=16"),
        )
    });
    record("7", "localization band is uniform in T (d=3)", loc, s);

    let s = Instant::now();
    let spectral: Vec<Result<ExperimentReport>> = [3, 4]
        .iter()
        .map(|d| {
            run_experiment(
                &config(&format!("d = {d}\n"), &root.join(format!("spectral{d}"))),
                "spectral",
            )
        })
        .collect();
    let pick = |names: &[&str]| -> Result<(bool, String)> {
        let mut parts = Vec::new();
        for (d, r) in [3, 4].iter().zip(&spectral) {
            let r = r.as_ref().map_err(clone)?;
            for n in names {
                let (ok, detail) = check(r, n);
                parts.push((ok, format!("d={d} {detail}")));
            }
        }
        Ok(all(&parts))
    };
    record(
        "8a",
        "field autocorrelation tail exponent d-1",
        pick(&["spectral_exponent"]),
        s,
    );
    record(
        "8b",
        "convolution term exponent 2d+gamma-4",
        pick(&[
            "convolution_exponent_gamma0.5",
            "convolution_exponent_gamma1",
        ]),
        s,
    );
    record(
        "8c",
        "dominance of the leading term",
        pick(&["dominance_gamma0.5", "dominance_gamma1"]),
        s,
    );

    let s = Instant::now();
    record(
        "9",
        "conditional-mean bounds and window convergence",
        c9(),
        s,
    );
    let s = Instant::now();
    record("10", "bitwise determinism", c10(&root.join("c10")), s);
    out
}

fn clone(e: &nirsim::Error) -> nirsim::Error {
    nirsim::Error::Domain(e.to_string())
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let outcomes = run_all(tmp.path());
    let mut unexpected = Vec::new();
    for o in &outcomes {
        let known = KNOWN_FAILURES.iter().find(|(id, _)| *id == o.id);
        let tag = match (o.passed, known) {
            (true, _) => "PASS",
            (false, Some(_)) => "FAIL (known)",
            (false, None) => "FAIL",
        };
        println!("[{tag}] {}. {}: {}", o.id, o.title, o.detail);
        if let (false, Some((_, why))) = (o.passed, known) {
            println!("        known failure: {why}");
        }
        if !o.passed && known.is_none() {
            unexpected.push(o.id);
        }
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!("acceptance: {passed}/{} criteria passed", outcomes.len());
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
