//! Orchestration: runs a named experiment from a [`RunConfig`] and writes its
//! artifacts (CSV tables, a JSON summary, MCMC checkpoints) under
//! `output_dir/<experiment>/`.
//!
//! Every CSV starts with `# config_hash=<hex> code_version=<version>`; the
//! JSON summary records the same pair. Reruns with the same configuration
//! produce identical bytes, and interrupted MCMC runs resume from their
//! checkpoints (a checkpoint written under a different configuration is
//! refused).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::diagnostics::{
    convergent_lower_bound, convolution_tail_exponent, correlation_decay_fit, divergence_scan,
    ir_bound_integral, localization_ratio, spectral_integral, spectral_tail_fit,
    strictly_decreasing, CurvePoint, CurveRun, DivergencePoint, LocalizationReport, RadialBins,
    MIN_BIN_HITS,
};
use crate::error::{Error, Result};
use crate::kernels::{
    ir_criterion_scan, pair_kernel_momentum, pair_kernel_position, FormFactor, KernelTable,
};
use crate::path::{
    merge_estimates, run_chains, ChainSetup, CheckpointSpec, DiscretizedPath, Observable,
    PathConfig,
};
use crate::schrodinger::{solve_ground_state, GridSpec, PotentialSpec, RadialGroundState};
use crate::special::{gamma_half, sphere_area};
use crate::stats::{linear_regression, Estimate};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXPERIMENTS: [&str; 8] = [
    "kernels",
    "ir-scan",
    "sample",
    "divergence",
    "convergence",
    "localization",
    "decay",
    "spectral",
];

/// Environment variable holding the worker count.
pub const THREADS_VAR: &str = "NIRSIM_THREADS";

/// One pass/fail statement about an experiment's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// What an experiment wrote and concluded; also stored as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config_hash: String,
    pub code_version: String,
    /// File names relative to the experiment directory.
    pub files: Vec<String>,
    pub checks: Vec<Check>,
    pub summary: serde_json::Value,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Knobs that do not change what an experiment computes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Stop every chain after this many sweeps (checkpointing first); the
    /// experiment then fails with [`Error::Interrupted`] and a later run resumes.
    pub stop_after: Option<u64>,
}

/// Worker count from `NIRSIM_THREADS`, or `None` for the available parallelism.
pub fn thread_count() -> Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::invalid(
                THREADS_VAR,
                format!("expected a positive integer, got `{v}`"),
            )),
        },
    }
}

pub fn run_experiment(config: &RunConfig, name: &str) -> Result<ExperimentReport> {
    run_experiment_with(config, name, &RunOptions::default())
}

pub fn run_experiment_with(
    config: &RunConfig,
    name: &str,
    opts: &RunOptions,
) -> Result<ExperimentReport> {
    if !EXPERIMENTS.contains(&name) {
        return Err(Error::UnknownExperiment {
            name: name.to_string(),
            valid: EXPERIMENTS.to_vec(),
        });
    }
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count()? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid(THREADS_VAR, format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        let mut ctx = Context::new(config, name, opts)?;
        let (checks, summary) = match name {
            "kernels" => kernels(&mut ctx)?,
            "ir-scan" => ir_scan(&mut ctx)?,
            "sample" => sample(&mut ctx)?,
            "divergence" => divergence(&mut ctx)?,
            "convergence" => convergence(&mut ctx)?,
            "localization" => localization(&mut ctx)?,
            "decay" => decay(&mut ctx)?,
            _ => spectral(&mut ctx)?,
        };
        ctx.finish(checks, summary)
    })
}

struct Context<'a> {
    cfg: &'a RunConfig,
    name: &'a str,
    opts: &'a RunOptions,
    dir: PathBuf,
    hash: u64,
    files: Vec<String>,
}

impl<'a> Context<'a> {
    fn new(cfg: &'a RunConfig, name: &'a str, opts: &'a RunOptions) -> Result<Self> {
        let dir = cfg.output_dir.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Context {
            cfg,
            name,
            opts,
            dir,
            hash: cfg.hash(),
            files: Vec::new(),
        })
    }

    fn header(&self) -> String {
        format!(
            "# config_hash={:016x} code_version={CODE_VERSION}\n",
            self.hash
        )
    }

    fn write(&mut self, file: &str, body: &str) -> Result<()> {
        let path = self.dir.join(file);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        self.files.push(file.to_string());
        Ok(())
    }

    fn write_csv(&mut self, file: &str, columns: &str, rows: &[Vec<f64>]) -> Result<()> {
        let mut body = self.header();
        body.push_str(columns);
        body.push('\n');
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            body.push_str(&cells.join(","));
            body.push('\n');
        }
        self.write(file, &body)
    }

    fn write_curve(&mut self, file: &str, points: &[CurvePoint]) -> Result<()> {
        let rows: Vec<Vec<f64>> = points
            .iter()
            .map(|p| vec![p.abscissa, p.value.mean, p.value.stderr, p.value.ess])
            .collect();
        self.write_csv(file, "abscissa,mean,stderr,ess", &rows)
    }

    fn ground_state(&self) -> Result<RadialGroundState> {
        let pot = PotentialSpec::from_params(&self.cfg.params)?;
        solve_ground_state(&pot, self.cfg.params.d, GridSpec::default())
    }

    /// Kernel table covering pair distances in the ground-state domain and lags up to `2 t_max`.
    fn table(&self, gs: &RadialGroundState, t_max: f64) -> Result<KernelTable> {
        KernelTable::build(
            &self.cfg.params,
            2.0 * gs.r_max(),
            2.0 * t_max,
            self.cfg.table_resolution,
        )
    }

    /// Chains always checkpoint on completion (and on `stop_after`), so an
    /// identical rerun resumes and a changed configuration is refused.
    fn checkpoint(&self, sub: &str) -> CheckpointSpec {
        CheckpointSpec {
            dir: self.dir.join(sub),
            every: self.cfg.checkpoint_every,
            stop_after: self.opts.stop_after,
        }
    }

    fn curve_run<'b>(
        &self,
        gs: &'b RadialGroundState,
        table: &'b KernelTable,
        ckpt: Option<&'b CheckpointSpec>,
    ) -> CurveRun<'b> {
        CurveRun {
            params: self.cfg.params,
            dt: self.cfg.path.dt,
            mcmc: self.cfg.mcmc,
            gs,
            table,
            config_hash: self.hash,
            checkpoint: ckpt,
        }
    }

    fn finish(
        mut self,
        checks: Vec<Check>,
        summary: serde_json::Value,
    ) -> Result<ExperimentReport> {
        for c in &checks {
            if c.passed {
                log::info!("{}: {} passed ({})", self.name, c.name, c.detail);
            } else {
                log::warn!("{}: {} FAILED ({})", self.name, c.name, c.detail);
            }
        }
        self.files.push("summary.json".into());
        let report = ExperimentReport {
            experiment: self.name.to_string(),
            config_hash: format!("{:016x}", self.hash),
            code_version: CODE_VERSION.to_string(),
            files: self.files.clone(),
            checks,
            summary,
        };
        let text = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::invalid("summary", format!("cannot serialize: {e}")))?;
        let path = self.dir.join("summary.json");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(report)
    }
}

/// Turns the "stopped early" state of a checkpointed run into [`Error::Interrupted`].
fn resumable<T>(ctx: &Context<'_>, result: Result<T>) -> Result<T> {
    match result {
        Err(Error::InsufficientData(m))
            if ctx.opts.stop_after.is_some() && m.contains("before completion") =>
        {
            Err(Error::Interrupted(ctx.dir.clone()))
        }
        other => other,
    }
}

/// `W(0, 0) = -(1/8) |S^{d-1}| e² Γ((d-1)/2) / (2 σ^{d-1})`.
fn w_origin(cfg: &RunConfig) -> f64 {
    let p = &cfg.params;
    -0.125 * sphere_area(p.d) * p.e * p.e * gamma_half(p.d - 1)
        / (2.0 * p.sigma.powi(p.d as i32 - 1))
}

/// Momentum- and position-space kernels on a 20 x 20 grid, plus the saved table.
fn kernels(ctx: &mut Context<'_>) -> Result<(Vec<Check>, serde_json::Value)> {
    let p = ctx.cfg.params;
    let mut rows = Vec::new();
    let mut max_rel: f64 = 0.0;
    for i in 0..20 {
        for j in 0..20 {
            let (r, t) = (0.25 * i as f64 * p.sigma, 0.25 * j as f64 * p.sigma);
            let wm = pair_kernel_momentum(r, t, &p)?;
            let wp = pair_kernel_position(r, t, &p)?;
            let rel = if wm == 0.0 {
                (wp - wm).abs()
            } else {
                ((wp - wm) / wm).abs()
            };
            max_rel = max_rel.max(rel);
            rows.push(vec![r, t, wm, wp]);
        }
    }
    ctx.write_csv("kernels.csv", "r,t,W_momentum,W_position", &rows)?;
    let w00 = pair_kernel_momentum(0.0, 0.0, &p)?;
    let w00_exact = w_origin(ctx.cfg);
    let w00_err = if w00_exact == 0.0 {
        w00.abs()
    } else {
        ((w00 - w00_exact) / w00_exact).abs()
    };
    let gs = ctx.ground_state()?;
    let table = ctx.table(&gs, ctx.cfg.path.t_half)?;
    let path = ctx.dir.join("kernel_table.nirk");
    table.save(&path)?;
    ctx.files.push("kernel_table.nirk".into());
    let checks = vec![
        Check::new(
            "cross_representation",
            max_rel < 1e-6,
            format!("max relative difference {max_rel:.3e} (limit 1e-6)"),
        ),
        Check::new(
            "origin_value",
            w00_err < 1e-8,
            format!("W(0,0) = {w00:.15} vs {w00_exact:.15}"),
        ),
    ];
    let summary = json!({
        "max_relative_difference": max_rel,
        "w_origin": w00,
        "w_origin_exact": w00_exact,
        "table": {"r_max": table.r_max(), "t_max": table.t_max(), "resolution": table.resolution()},
    });
    Ok((checks, summary))
}

/// `I(ε) = ∫_{ε<=|k|<=1} |ρ̂|²/|k|³ dk`: logarithmic growth in d = 3, convergence above.
fn ir_scan(ctx: &mut Context<'_>) -> Result<(Vec<Check>, serde_json::Value)> {
    let p = ctx.cfg.params;
    let eps: Vec<f64> = (4..=20).map(|k| 10f64.powf(-(k as f64) / 4.0)).collect();
    let scan = ir_criterion_scan(&eps, &p)?;
    let rows: Vec<Vec<f64>> = scan.iter().map(|&(e, i)| vec![e, i]).collect();
    ctx.write_csv("ir_scan.csv", "epsilon,I", &rows)?;
    let mut checks = Vec::new();
    let summary = if p.d == 3 {
        let x: Vec<f64> = eps.iter().map(|e| (1.0 / e).ln()).collect();
        let y: Vec<f64> = scan.iter().map(|s| s.1).collect();
        let fit = linear_regression(&x, &y)?;
        let expected = 4.0 * std::f64::consts::PI * p.e * p.e;
        let rel = if expected > 0.0 {
            (fit.slope / expected - 1.0).abs()
        } else {
            fit.slope.abs()
        };
        checks.push(Check::new(
            "log_slope",
            rel < 0.02 && fit.r2 > 0.999,
            format!(
                "slope {:.6} vs {expected:.6}, R² = {:.6}",
                fit.slope, fit.r2
            ),
        ));
        json!({"slope": fit.slope, "slope_expected": expected, "r2": fit.r2})
    } else {
        let at = |e: f64| {
            scan.iter()
                .find(|s| (s.0 / e - 1.0).abs() < 1e-9)
                .map(|s| s.1)
        };
        let reference = at(1e-3).expect("1e-3 is on the grid");
        let n = scan.len();
        let last_increment = (scan[n - 1].1 - scan[n - 2].1).abs();
        checks.push(Check::new(
            "converges",
            last_increment < 1e-3 * reference,
            format!("last increment {last_increment:.3e} vs I(1e-3) = {reference:.6}"),
        ));
        json!({"I_1e-3": reference, "last_increment": last_increment})
    };
    Ok((checks, summary))
}

/// Basic observables of the Gibbs measure at `T`.
struct SampleObs;

impl Observable for SampleObs {
    fn names(&self) -> Vec<String> {
        vec!["r0".into(), "r0_sq".into()]
    }

    fn eval(&self, path: &DiscretizedPath, cfg: &PathConfig, out: &mut Vec<f64>) -> Result<()> {
        let r = path.radius(cfg.mid());
        out.push(r);
        out.push(r * r);
        Ok(())
    }
}

fn sample(ctx: &mut Context<'_>) -> Result<(Vec<Check>, serde_json::Value)> {
    let gs = ctx.ground_state()?;
    let table = ctx.table(&gs, ctx.cfg.path.t_half)?;
    let setup = ChainSetup {
        cfg: ctx.cfg.path,
        mcmc: ctx.cfg.mcmc,
        gs: &gs,
        table: &table,
        config_hash: ctx.hash,
    };
    let ckpt = ctx.checkpoint("checkpoints");
    let out = run_chains(&setup, &SampleObs, Some(&ckpt))?;
    if out.iter().any(|o| !o.completed) {
        return Err(Error::Interrupted(ctx.dir.clone()));
    }
    let est = merge_estimates(&out)?;
    let mut body = ctx.header();
    body.push_str("observable,mean,stderr,ess\n");
    for (n, e) in &est {
        let _ = writeln!(body, "{n},{:?},{:?},{:?}", e.mean, e.stderr, e.ess);
    }
    ctx.write("sample.csv", &body)?;
    let rates: Vec<serde_json::Value> = out
        .iter()
        .map(|o| {
            json!({
                "chain": o.chain_id,
                "proposed": o.tally.proposed,
                "accepted": o.tally.accepted,
            })
        })
        .collect();
    let summary = json!({
        "T": ctx.cfg.path.t_half,
        "estimates": est.iter().map(|(n, e)| json!({"name": n, "estimate": e})).collect::<Vec<_>>(),
        "chains": rates,
    });
    Ok((Vec::new(), summary))
}

/// Stored output of the shared divergence scan; reused by `localization`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScanCache {
    config_hash: String,
    code_version: String,
    points: Vec<DivergencePoint>,
}

/// Runs the divergence scan over `T_list`, or loads it when a previous run
/// with the same configuration left it in `output_dir/scan/`.
fn shared_scan(ctx: &Context<'_>) -> Result<Vec<DivergencePoint>> {
    let dir = ctx.cfg.output_dir.join("scan");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join("divergence_scan.json");
    let hash = format!("{:016x}", ctx.hash);
    if path.exists() {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let cache: ScanCache = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        if cache.config_hash != hash {
            return Err(Error::HashMismatch {
                expected: hash,
                found: cache.config_hash,
                path,
            });
        }
        return Ok(cache.points);
    }
    let gs = ctx.ground_state()?;
    let t_max = ctx.cfg.t_list[ctx.cfg.t_list.len() - 1];
    let table = ctx.table(&gs, t_max)?;
    let ckpt = CheckpointSpec {
        dir: dir.join("checkpoints"),
        ..ctx.checkpoint("")
    };
    let run = ctx.curve_run(&gs, &table, Some(&ckpt));
    let points = resumable(ctx, divergence_scan(&ctx.cfg.t_list, &run, &ctx.cfg.test))?;
    let cache = ScanCache {
        config_hash: hash,
        code_version: CODE_VERSION.to_string(),
        points,
    };
    let text = serde_json::to_string(&cache).map_err(|e| Error::invalid("scan", e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(cache.points)
}

/// Weighted least-squares slope of `ln value` against `ln abscissa`, using the
/// Monte Carlo errors as weights; returns `(slope, stderr)`.
fn log_log_slope(points: &[CurvePoint]) -> (f64, f64) {
    let x: Vec<f64> = points.iter().map(|p| p.abscissa.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.value.mean.ln()).collect();
    let w: Vec<f64> = points
        .iter()
        .map(|p| {
            let rel = p.value.stderr / p.value.mean;
            if rel > 0.0 {
                1.0 / (rel * rel)
            } else {
                1.0
            }
        })
        .collect();
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(x, w)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = x
        .iter()
        .zip(&y)
        .zip(&w)
        .map(|((x, y), w)| w * (x - mx) * (y - my))
        .sum();
    let slope = sxy / sxx;
    let exact = points.iter().all(|p| p.value.stderr == 0.0);
    (slope, if exact { 0.0 } else { (1.0 / sxx).sqrt() })
}

fn divergence(ctx: &mut Context<'_>) -> Result<(Vec<Check>, serde_json::Value)> {
    let z = ctx.cfg.acceptance.z;
    let points = shared_scan(ctx)?;
    let curve = |f: &dyn Fn(&DivergencePoint) -> Estimate| -> Vec<CurvePoint> {
        points
            .iter()
            .map(|p| CurvePoint {
                abscissa: p.t,
                value: f(p),
                config_hash: p.config_hash,
            })
            .collect()
    };
    let caps: Vec<Vec<CurvePoint>> = (0..points[0].capped.len())
        .map(|k| curve(&|p| p.capped[k].1))
        .collect();
    let overlap = curve(&|p| p.overlap_bound);
    // the middle cap is the reported curve
    let main = &caps[caps.len() / 2];
    ctx.write_curve("divergence.csv", main)?;
    for (k, c) in caps.iter().enumerate() {
        ctx.write_curve(&format!("divergence_cap{}.csv", points[0].capped[k].0), c)?;
    }
    ctx.write_curve("overlap.csv", &overlap)?;

    let (first, last) = (main[0].value, main[main.len() - 1].value);
    let ratio = last.mean / first.mean;
    // ratio < factor beyond z combined (delta-method) standard errors
    let ratio_se =
        ratio * ((first.stderr / first.mean).powi(2) + (last.stderr / last.mean).powi(2)).sqrt();
    let factor = ctx.cfg.acceptance.decay_factor;
    let mut max_cap_z: f64 = 0.0;
    for i in 0..points.len() {
        for a in 0..caps.len() {
            for b in a + 1..caps.len() {
                let zab = caps[a][i].value.z_distance(&caps[b][i].value);
                if zab.is_finite() {
                    max_cap_z = max_cap_z.max(zab);
                } else {
                    max_cap_z = f64::INFINITY;
                }
            }
        }
    }
    let max_overlap = overlap
        .iter()
        .map(|p| p.value.mean)
        .fold(f64::NEG_INFINITY, f64::max);
    let (slope, slope_se) = log_log_slope(&overlap);
    let checks = vec![
        Check::new(
            "capped_strictly_decreasing",
            strictly_decreasing(main, z),
            format!(
                "values {:?}",
                main.iter().map(|p| (p.value.mean, p.value.stderr)).collect::<Vec<_>>()
            ),
        ),
        Check::new(
            "capped_decay_factor",
            ratio + z * ratio_se < factor,
            format!("value(Tmax)/value(Tmin) = {ratio:.4} ± {ratio_se:.4}, need < {factor} beyond {z} stderr"),
        ),
        Check::new(
            "cap_insensitive",
            max_cap_z <= z,
            format!("largest pairwise z between caps {max_cap_z:.3}"),
        ),
        Check::new(
            "overlap_at_most_one",
            max_overlap <= 1.0,
            format!("largest value {max_overlap:.6}"),
        ),
        Check::new(
            "overlap_strictly_decreasing",
            strictly_decreasing(&overlap, z),
            format!(
                "values {:?}",
                overlap.iter().map(|p| (p.value.mean, p.value.stderr)).collect::<Vec<_>>()
            ),
        ),
        Check::new(
            "overlap_log_slope_negative",
            slope + z * slope_se < 0.0,
            format!("d ln value / d ln T = {slope:.4} ± {slope_se:.4}"),
        ),
    ];
    let summary = json!({
        "d": ctx.cfg.params.d,
        "points": points.iter().map(|p| json!({
            "T": p.t,
            "baseline": p.baseline,
            "capped": p.capped,
            "overlap_bound": p.overlap_bound,
            "r0_samples": p.r0.iter().map(Vec::len).sum::<usize>(),
        })).collect::<Vec<_>>(),
        "ratio": ratio,
        "ratio_stderr": ratio_se,
        "overlap_log_slope": slope,
        "overlap_log_slope_stderr": slope_se,
        "max_cap_z": max_cap_z,
    });
    Ok((checks, summary))
}

fn convergence(ctx: &mut Context<'_>) -> Result<(Vec<Check>, serde_json::Value)> {
    let z = ctx.cfg.acceptance.z;
    let gs = ctx.ground_state()?;
    let t_max = ctx.cfg.t_list[ctx.cfg.t_list.len() - 1];
    let table = ctx.table(&gs, t_max)?;
    let ckpt = ctx.checkpoint("checkpoints");
    let run = ctx.curve_run(&gs, &table, Some(&ckpt));
    let points = resumable(ctx, convergent_lower_bound(&ctx.cfg.t_list, &run))?;
    let curve: Vec<CurvePoint> = points
        .iter()
        .map(|p| CurvePoint {
            abscissa: p.t,
            value: p.bound,
            config_hash: p.config_hash,
        })
        .collect();
    ctx.write_curve("convergence.csv", &curve)?;
    let mut max_pair_z: f64 = 0.0;
    for a in 0..curve.len() {
        for b in a + 1..curve.len() {
            let zab = curve[a].value.z_distance(&curve[b].value);
            max_pair_z = if zab.is_finite() {
                max_pair_z.max(zab)
            } else {
                f64::INFINITY
            };
        }
    }
    let min_margin = points
        .iter()
        .map(|p| p.bound.mean - p.analytic)
        .fold(f64::INFINITY, f64::min);
    let integral = ir_bound_integral(&ctx.cfg.params)?;
    let (slope, slope_se) = log_log_slope(&curve);
    // the quadratic term approaches its limit like 1/T, so b(T) = b_inf + c/T
    let limit = if curve.len() >= 3 {
        let x: Vec<f64> = curve.iter().map(|p| 1.0 / p.abscissa).collect();
        let y: Vec<f64> = curve.iter().map(|p| p.value.mean).collect();
        let fit = linear_regression(&x, &y)?;
        json!({"b_inf": fit.intercept, "c": fit.slope, "r2": fit.r2})
    } else {
        serde_json::Value::Null
    };
    let checks = vec![
        Check::new(
            "positive",
            points.iter().all(|p| p.bound.mean > 0.0),
            format!(
                "smallest bound {:.6}",
                points
                    .iter()
                    .map(|p| p.bound.mean)
                    .fold(f64::INFINITY, f64::min)
            ),
        ),
        Check::new(
            "flat",
            max_pair_z <= z,
            format!("largest pairwise z {max_pair_z:.3} (limit {z})"),
        ),
        Check::new(
            "above_analytic",
            min_margin >= 0.0,
            format!("smallest margin over the analytic bound {min_margin:.6}"),
        ),
    ];
    let summary = json!({
        "d": ctx.cfg.params.d,
        "bound_integral": integral,
        "points": points,
        "max_pair_z": max_pair_z,
        "log_slope": slope,
        "log_slope_stderr": slope_se,
        "inverse_t_extrapolation": limit,
    });
    Ok((checks, summary))
}

fn localization(ctx: &mut Context<'_>) -> Result<(Vec<Check>, serde_json::Value)> {
    let z = ctx.cfg.acceptance.z;
    let points = shared_scan(ctx)?;
    let gs = ctx.ground_state()?;
    let bins = RadialBins::equal_mass(&gs, ctx.cfg.bins)?;
    let reports: Vec<LocalizationReport> = points
        .iter()
        .map(|p| localization_ratio(&p.r0, &bins))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (p, rep) in points.iter().zip(&reports) {
        for b in &rep.bins {
            rows.push(vec![
                p.t,
                b.lo,
                b.hi,
                b.nu0,
                b.hits as f64,
                b.ratio.mean,
                b.ratio.stderr,
                b.ratio.ess,
            ]);
        }
    }
    ctx.write_csv(
        "localization.csv",
        "T,r_lo,r_hi,nu0,hits,ratio,stderr,ess",
        &rows,
    )?;
    let mut checks = Vec::new();
    for (p, rep) in points.iter().zip(&reports) {
        checks.push(Check::new(
            &format!("bins_populated_T{}", p.t),
            rep.excluded.is_empty(),
            format!(
                "bins with fewer than {MIN_BIN_HITS} hits: {:?}",
                rep.excluded
            ),
        ));
    }
    for w in points.windows(2).zip(reports.windows(2)) {
        let ((pa, pb), (ra, rb)) = ((&w.0[0], &w.0[1]), (&w.1[0], &w.1[1]));
        let mut max_z: f64 = 0.0;
        let mut compared = 0;
        for ba in &ra.bins {
            if let Some(bb) = rb.bins.iter().find(|b| b.lo == ba.lo) {
                max_z = max_z.max(ba.ratio.z_distance(&bb.ratio));
                compared += 1;
            }
        }
        checks.push(Check::new(
            &format!("uniform_T{}_T{}", pa.t, pb.t),
            compared > 0 && max_z <= z,
            format!("{compared} bins compared, largest z {max_z:.3}"),
        ));
    }
    let summary = json!({
        "bins": ctx.cfg.bins,
        "edges": bins.edges,
        "per_T": points.iter().zip(&reports).map(|(p, r)| json!({
            "T": p.t,
            "band": [r.min_ratio, r.max_ratio],
            "c": (1.0 / r.min_ratio).max(r.max_ratio),
            "excluded": r.excluded,
            "normalization": r.normalization,
        })).collect::<Vec<_>>(),
    });
    Ok((checks, summary))
}

fn decay(ctx: &mut Context<'_>) -> Result<(Vec<Check>, serde_json::Value)> {
    let z = ctx.cfg.acceptance.z;
    let t = ctx.cfg.path.t_half;
    let gs = ctx.ground_state()?;
    let table = ctx.table(&gs, t)?;
    let ckpt = ctx.checkpoint("checkpoints");
    let run = ctx.curve_run(&gs, &table, Some(&ckpt));
    let lags: Vec<f64> = ctx.cfg.lags.iter().copied().filter(|&l| l <= t).collect();
    let f = |q: &[f64]| q.iter().map(|x| x * x).sum::<f64>().sqrt().min(1.0);
    let report = resumable(ctx, correlation_decay_fit(&run, t, &f, &f, &lags))?;
    let curve: Vec<CurvePoint> = report
        .lags
        .iter()
        .zip(&report.covariances)
        .map(|(&l, &c)| CurvePoint {
            abscissa: l,
            value: c,
            config_hash: ctx.hash,
        })
        .collect();
    ctx.write_curve("decay.csv", &curve)?;
    let mut checks = Vec::new();
    let at = |lag: f64| {
        curve
            .iter()
            .find(|p| (p.abscissa - lag).abs() < 1e-9)
            .map(|p| p.value)
    };
    if let (Some(a), Some(b)) = (at(1.0), at(8.0)) {
        checks.push(Check::new(
            "decays",
            a.mean - b.mean > z * a.stderr.hypot(b.stderr),
            format!(
                "cov(1) = {:.4e} ± {:.1e}, cov(8) = {:.4e} ± {:.1e}",
                a.mean, a.stderr, b.mean, b.stderr
            ),
        ));
    }
    let summary = json!({
        "T": t,
        "observable": "min(|q|, 1)",
        "lags": report.lags,
        "covariances": report.covariances,
        "fit": report.fit,
        "residuals": report.residuals,
    });
    Ok((checks, summary))
}

fn spectral(ctx: &mut Context<'_>) -> Result<(Vec<Check>, serde_json::Value)> {
    let d = ctx.cfg.params.d;
    let a = ctx.cfg.acceptance;
    let h = FormFactor::gaussian(1.0);
    let ts = &ctx.cfg.spectral_t;
    let g: Vec<f64> = ts
        .iter()
        .map(|&t| spectral_integral(&h, d, t))
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = ts.iter().zip(&g).map(|(&t, &g)| vec![t, g]).collect();
    ctx.write_csv("spectral.csv", "t,G", &rows)?;
    let fit = spectral_tail_fit(&h, d, ts)?;
    let expected = d as f64 - 1.0;
    let mut checks = vec![Check::new(
        "spectral_exponent",
        (fit.exponent - expected).abs() <= a.spectral_tol,
        format!(
            "exponent {:.4} vs {expected} (tolerance {})",
            fit.exponent, a.spectral_tol
        ),
    )];
    let mut conv = Vec::new();
    let mut conv_rows = Vec::new();
    for &gamma in &ctx.cfg.gamma_list {
        let c = convolution_tail_exponent(d, gamma, ts)?;
        for (&t, &v) in ts.iter().zip(&c.values) {
            conv_rows.push(vec![gamma, t, v]);
        }
        checks.push(Check::new(
            &format!("convolution_exponent_gamma{gamma}"),
            (c.fit.exponent - c.predicted).abs() <= a.convolution_tol,
            format!(
                "exponent {:.4} vs 2d+γ-4 = {} (tolerance {})",
                c.fit.exponent, c.predicted, a.convolution_tol
            ),
        ));
        checks.push(Check::new(
            &format!("dominance_gamma{gamma}"),
            c.dominance,
            format!("2d+γ-4 = {} vs d-1 = {expected}", c.predicted),
        ));
        conv.push(json!({"gamma": gamma, "fit": c.fit, "predicted": c.predicted, "dominance": c.dominance}));
    }
    ctx.write_csv("convolution.csv", "gamma,t,value", &conv_rows)?;
    let summary = json!({"d": d, "fit": fit, "convolution": conv});
    Ok((checks, summary))
}

/// Reads a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::parse(&text)
}
