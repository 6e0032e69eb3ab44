//! Numerical experiments: divergence curves in d = 3, Jensen lower bounds in
//! d >= 4, localization of the time-zero marginal, correlation decay and the
//! power-law tails of the field autocorrelation.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::SingularityFunctional;
use crate::kernels::{
    FormFactor, IrTestFunction, KernelTable, ModelParams, DEFAULT_TABLE_RESOLUTION,
};
use crate::path::{
    cross_action, dist, lag_slices, run_chains, w_lag, ChainOutput, ChainSetup, CheckpointSpec,
    DiscretizedPath, McmcConfig, Observable, PathConfig,
};
use crate::quadrature::{integrate, Tolerance};
use crate::schrodinger::RadialGroundState;
use crate::special::{gamma_half, sphere_area};
use crate::stats::{fit_power_tail, jackknife, linear_regression, Estimate, TailFit};

/// One point of a curve over `T` (or a time lag).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub abscissa: f64,
    pub value: Estimate,
    pub config_hash: u64,
}

/// Common hash of a set of points; mixing runs with different configs is refused.
pub fn common_hash(points: &[CurvePoint]) -> Result<u64> {
    let first = points
        .first()
        .ok_or_else(|| Error::InsufficientData("empty curve".into()))?
        .config_hash;
    match points.iter().find(|p| p.config_hash != first) {
        None => Ok(first),
        Some(p) => Err(Error::HashMismatch {
            expected: format!("{first:016x}"),
            found: format!("{:016x}", p.config_hash),
            path: PathBuf::from("<curve>"),
        }),
    }
}

/// Inputs shared by all MCMC curve points.
#[derive(Clone, Copy)]
pub struct CurveRun<'a> {
    pub params: ModelParams,
    pub dt: f64,
    pub mcmc: McmcConfig,
    pub gs: &'a RadialGroundState,
    /// Must cover time lags up to `2 max(T)`.
    pub table: &'a KernelTable,
    pub config_hash: u64,
    /// Per-point checkpoints go to `dir/T<value>`.
    pub checkpoint: Option<&'a CheckpointSpec>,
}

/// A kernel table large enough for every point of a curve up to `t_max`:
/// pair distances up to twice the ground-state domain and lags up to `2 t_max`.
pub fn curve_table(
    params: &ModelParams,
    gs: &RadialGroundState,
    t_max: f64,
) -> Result<KernelTable> {
    KernelTable::build(
        params,
        2.0 * gs.r_max(),
        2.0 * t_max,
        DEFAULT_TABLE_RESOLUTION,
    )
}

/// Seed of curve point `index`; distinct streams per point and chain.
pub fn point_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn check_list(t_list: &[f64]) -> Result<()> {
    if t_list.is_empty() || t_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(
            "T_list",
            "must be nonempty and strictly increasing",
        ));
    }
    Ok(())
}

impl CurveRun<'_> {
    fn check(&self, t_list: &[f64]) -> Result<()> {
        check_list(t_list)?;
        let t_max = t_list[t_list.len() - 1];
        if self.table.t_max() < 2.0 * t_max {
            return Err(Error::invalid(
                "table",
                format!(
                    "table covers lags up to {}, need {}",
                    self.table.t_max(),
                    2.0 * t_max
                ),
            ));
        }
        if self.table.params() != &self.params {
            return Err(Error::invalid(
                "table",
                "table was built for different model parameters",
            ));
        }
        if self.gs.d() != self.params.d {
            return Err(Error::invalid(
                "ground state",
                "ground state dimension differs from d",
            ));
        }
        Ok(())
    }

    fn point(&self, t: f64, index: usize, obs: &dyn Observable) -> Result<Vec<ChainOutput>> {
        let cfg = PathConfig::new(t, self.dt, self.params.d)?;
        let mcmc = McmcConfig {
            seed: point_seed(self.mcmc.seed, index),
            ..self.mcmc
        };
        let setup = ChainSetup {
            cfg,
            mcmc,
            gs: self.gs,
            table: self.table,
            config_hash: self.config_hash,
        };
        let ckpt = self.checkpoint.map(|c| CheckpointSpec {
            dir: c.dir.join(format!("T{t}")),
            ..c.clone()
        });
        let out = run_chains(&setup, obs, ckpt.as_ref())?;
        if out.iter().any(|o| !o.completed) {
            return Err(Error::InsufficientData(format!(
                "T = {t}: run stopped before completion"
            )));
        }
        Ok(out)
    }
}

fn merged(outputs: &[ChainOutput], k: usize) -> Result<Estimate> {
    let parts: Vec<Estimate> = outputs
        .iter()
        .map(|o| Estimate::from_series(&o.series[k]))
        .collect::<Result<_>>()?;
    Estimate::combine(&parts)
}

fn per_chain(outputs: &[ChainOutput], k: usize) -> Vec<Vec<f64>> {
    outputs.iter().map(|o| o.series[k].clone()).collect()
}

/// Cap multiples of `exp(‖s‖²/8)` used for the capped functional.
pub const CAP_FACTORS: [f64; 3] = [5.0, 10.0, 20.0];

struct DivergenceObs<'a> {
    sf: SingularityFunctional,
    caps: Vec<f64>,
    table: &'a KernelTable,
}

impl Observable for DivergenceObs<'_> {
    fn names(&self) -> Vec<String> {
        let mut n: Vec<String> = CAP_FACTORS.iter().map(|c| format!("F_cap{c}")).collect();
        n.push("exp_cross".into());
        n.push("r0".into());
        n
    }

    fn eval(&self, path: &DiscretizedPath, cfg: &PathConfig, out: &mut Vec<f64>) -> Result<()> {
        let f = self.sf.expectation(path)?;
        out.extend(self.caps.iter().map(|&c| f.min(c)));
        out.push(cross_action(path, self.table, cfg)?.exp());
        out.push(path.radius(cfg.mid()));
        Ok(())
    }
}

/// Everything measured in one d = 3 divergence run at a single `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergencePoint {
    pub t: f64,
    /// `exp(‖s‖²/8)`, the value without coupling.
    pub baseline: f64,
    /// `(cap factor, E_N[min(E[F|Q], factor · baseline)])`.
    pub capped: Vec<(f64, Estimate)>,
    /// `E_N[exp(cross action)]`.
    pub overlap_bound: Estimate,
    /// `|q₀|` samples, one series per chain.
    pub r0: Vec<Vec<f64>>,
    pub config_hash: u64,
}

/// Samples `N_T` for every `T` and records the capped singularity
/// functional, the exponentiated cross action and `|q₀|`.
pub fn divergence_scan(
    t_list: &[f64],
    run: &CurveRun<'_>,
    test: &IrTestFunction,
) -> Result<Vec<DivergencePoint>> {
    run.check(t_list)?;
    t_list
        .par_iter()
        .enumerate()
        .map(|(idx, &t)| {
            let cfg = PathConfig::new(t, run.dt, run.params.d)?;
            let sf = SingularityFunctional::new(test, &run.params, &cfg)?;
            let baseline = sf.baseline();
            let obs = DivergenceObs {
                caps: CAP_FACTORS.iter().map(|c| c * baseline).collect(),
                sf,
                table: run.table,
            };
            let out = run.point(t, idx, &obs)?;
            let capped = CAP_FACTORS
                .iter()
                .enumerate()
                .map(|(k, &c)| Ok((c, merged(&out, k)?)))
                .collect::<Result<_>>()?;
            let nc = CAP_FACTORS.len();
            Ok(DivergencePoint {
                t,
                baseline,
                capped,
                overlap_bound: merged(&out, nc)?,
                r0: per_chain(&out, nc + 1),
                config_hash: run.config_hash,
            })
        })
        .collect()
}

/// `E_{N_T}[min(E[F|Q], C̄)]` over `T` with `C̄ = 10 exp(‖s‖²/8)`.
pub fn ir_divergence_curve(
    t_list: &[f64],
    run: &CurveRun<'_>,
    test: &IrTestFunction,
) -> Result<Vec<CurvePoint>> {
    if run.params.d != 3 {
        return Err(Error::UnsupportedDimension(
            run.params.d,
            "3 (divergence curve)",
        ));
    }
    Ok(divergence_scan(t_list, run, test)?
        .iter()
        .map(|p| CurvePoint {
            abscissa: p.t,
            value: p.capped[1].1,
            config_hash: p.config_hash,
        })
        .collect())
}

/// `E_{N_T}[exp(2∫_{-T}^0∫_0^T W)]`, an upper bound on `(1, Ψ_T)²`.
pub fn overlap_upper_bound_curve(
    t_list: &[f64],
    run: &CurveRun<'_>,
    test: &IrTestFunction,
) -> Result<Vec<CurvePoint>> {
    Ok(divergence_scan(t_list, run, test)?
        .iter()
        .map(|p| CurvePoint {
            abscissa: p.t,
            value: p.overlap_bound,
            config_hash: p.config_hash,
        })
        .collect())
}

/// Strict decrease check: each step down exceeds `z` combined standard errors.
pub fn strictly_decreasing(points: &[CurvePoint], z: f64) -> bool {
    points
        .windows(2)
        .all(|w| w[0].value.mean - w[1].value.mean > z * w[0].value.stderr.hypot(w[1].value.stderr))
}

/// `-Σ_i Σ_j w_i w_j W(|q_i - q_j|, |t_i| + |t_j|) = 2 ∫ |ĝ⁰_T(k;Q)|² |k| dk`,
/// the quadratic term of the time-zero field density given `Q`.
pub fn tilt_quadratic(
    path: &DiscretizedPath,
    table: &KernelTable,
    cfg: &PathConfig,
) -> Result<f64> {
    if path.n_beads() != cfg.n_beads() || path.d() != cfg.d {
        return Err(Error::invalid(
            "path",
            "path does not match the path config",
        ));
    }
    if table.params().e == 0.0 {
        return Ok(0.0);
    }
    let slices = lag_slices(table, cfg);
    let n = cfg.n_beads();
    let m = cfg.mid();
    let mut total = 0.0;
    for i in 0..n {
        let li = i.abs_diff(m);
        let mut row = 0.5 * cfg.weight(i) * w_lag(table, &slices, 0.0, 2 * li, cfg.dt);
        for j in i + 1..n {
            let lag = li + j.abs_diff(m);
            row += cfg.weight(j)
                * w_lag(
                    table,
                    &slices,
                    dist(path.bead(i), path.bead(j)),
                    lag,
                    cfg.dt,
                );
        }
        total += 2.0 * cfg.weight(i) * row;
    }
    Ok(-total)
}

/// Radial bins with equal mass under `ν⁰ = ψ₀² dq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialBins {
    pub edges: Vec<f64>,
    /// `ν⁰` mass of each bin.
    pub nu0: Vec<f64>,
}

impl RadialBins {
    pub fn equal_mass(gs: &RadialGroundState, n_bins: usize) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::invalid("bins", "need at least 2 bins"));
        }
        let mut edges = vec![0.0];
        for b in 1..n_bins {
            let target = b as f64 / n_bins as f64;
            let (mut lo, mut hi) = (0.0, gs.r_max());
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if gs.radial_cdf(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            edges.push(0.5 * (lo + hi));
        }
        edges.push(f64::INFINITY);
        let cdf = |r: f64| if r.is_finite() { gs.radial_cdf(r) } else { 1.0 };
        let nu0 = edges.windows(2).map(|w| cdf(w[1]) - cdf(w[0])).collect();
        Ok(RadialBins { edges, nu0 })
    }

    pub fn len(&self) -> usize {
        self.nu0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu0.is_empty()
    }

    pub fn index(&self, r: f64) -> usize {
        self.edges[1..]
            .partition_point(|&e| e <= r)
            .min(self.len() - 1)
    }
}

/// Density ratio `dν_T/dν⁰` on one radial bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinRatio {
    pub lo: f64,
    pub hi: f64,
    pub nu0: f64,
    pub hits: usize,
    pub ratio: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    /// Bins with at least [`MIN_BIN_HITS`] samples.
    pub bins: Vec<BinRatio>,
    /// Indices of bins left out for undersampling.
    pub excluded: Vec<usize>,
    /// `Σ ratio · ν⁰` over the included bins.
    pub normalization: Estimate,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `(c₁, c₂)` with `c₁ ψ₀² <= ψ_T² <= c₂ ψ₀²` on the included bins.
    pub bounds: (f64, f64),
}

pub const MIN_BIN_HITS: usize = 100;
pub const MIN_LOCALIZATION_SAMPLES: usize = 10_000;

/// Bin-wise ratio of the sampled `|q₀|` law to `ν⁰`. `r0` holds one series
/// per chain; errors account for autocorrelation within each chain.
pub fn localization_ratio(r0: &[Vec<f64>], bins: &RadialBins) -> Result<LocalizationReport> {
    let total: usize = r0.iter().map(Vec::len).sum();
    if total < MIN_LOCALIZATION_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{total} samples of q0; need at least {MIN_LOCALIZATION_SAMPLES}"
        )));
    }
    let indicator = |b: usize, scale: f64| -> Result<Estimate> {
        let parts: Vec<Estimate> = r0
            .iter()
            .filter(|s| s.len() >= 2)
            .map(|s| {
                let xs: Vec<f64> = s
                    .iter()
                    .map(|&r| if bins.index(r) == b { scale } else { 0.0 })
                    .collect();
                Estimate::from_series(&xs)
            })
            .collect::<Result<_>>()?;
        Estimate::combine(&parts)
    };
    let mut out = Vec::new();
    let mut excluded = Vec::new();
    for b in 0..bins.len() {
        let hits = r0.iter().flatten().filter(|&&r| bins.index(r) == b).count();
        if hits < MIN_BIN_HITS {
            excluded.push(b);
            continue;
        }
        out.push(BinRatio {
            lo: bins.edges[b],
            hi: bins.edges[b + 1],
            nu0: bins.nu0[b],
            hits,
            ratio: indicator(b, 1.0 / bins.nu0[b])?,
        });
    }
    if out.is_empty() {
        return Err(Error::InsufficientData("no bin has enough samples".into()));
    }
    if !excluded.is_empty() {
        log::warn!(
            "localization: bins {excluded:?} have fewer than {MIN_BIN_HITS} hits and are excluded"
        );
    }
    // Σ_b ratio_b ν⁰_b is the sample fraction in the included bins
    let included: Vec<usize> = (0..bins.len()).filter(|b| !excluded.contains(b)).collect();
    let parts: Vec<Estimate> = r0
        .iter()
        .filter(|s| s.len() >= 2)
        .map(|s| {
            let xs: Vec<f64> = s
                .iter()
                .map(|&r| {
                    if included.contains(&bins.index(r)) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            Estimate::from_series(&xs)
        })
        .collect::<Result<_>>()?;
    let normalization = Estimate::combine(&parts)?;
    let min_ratio = out
        .iter()
        .map(|b| b.ratio.mean)
        .fold(f64::INFINITY, f64::min);
    let max_ratio = out
        .iter()
        .map(|b| b.ratio.mean)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(LocalizationReport {
        bins: out,
        excluded,
        normalization,
        min_ratio,
        max_ratio,
        bounds: (min_ratio, max_ratio),
    })
}

struct LowerBoundObs<'a> {
    table: &'a KernelTable,
}

impl Observable for LowerBoundObs<'_> {
    fn names(&self) -> Vec<String> {
        vec!["r0".into(), "tilt".into()]
    }

    fn eval(&self, path: &DiscretizedPath, cfg: &PathConfig, out: &mut Vec<f64>) -> Result<()> {
        out.push(path.radius(cfg.mid()));
        out.push(tilt_quadratic(path, self.table, cfg)?);
        Ok(())
    }
}

/// Jensen lower bound on `E_{𝕡⁰}[(d𝕡_T/d𝕡⁰)^{1/2}]` at one `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundPoint {
    pub t: f64,
    /// `Σ_b (ν⁰_b ν_T,b)^{1/2} exp(-E[Q | q₀ ∈ b]/4)` with jackknife error.
    pub bound: Estimate,
    /// `exp(-(1/8) ∫ |ρ̂|²/|k|³ dk) Σ_b (ν⁰_b ν_T,b)^{1/2}`.
    pub analytic: f64,
    /// Largest sampled `Q`; never above `(1/2) ∫ |ρ̂|²/|k|³ dk`.
    pub max_tilt: f64,
    pub config_hash: u64,
}

/// `∫ |ρ̂|² / |k|³ dk = |S^{d-1}| e² Γ((d-3)/2) / (2 σ^{d-3})`, finite for `d >= 4`.
pub fn ir_bound_integral(params: &ModelParams) -> Result<f64> {
    if params.d < 4 {
        return Err(Error::UnsupportedDimension(
            params.d,
            "4, 5 (the integral diverges in d = 3)",
        ));
    }
    let d = params.d;
    Ok(sphere_area(d) * params.e * params.e * gamma_half(d - 3)
        / (2.0 * params.sigma.powi(d as i32 - 3)))
}

/// Jackknife groups per chain for the binned lower bound.
const BLOCKS_PER_CHAIN: usize = 10;

/// Binned Jensen lower bound from paired `(|q₀|, Q)` series.
pub fn binned_lower_bound(
    r0: &[Vec<f64>],
    tilt: &[Vec<f64>],
    bins: &RadialBins,
) -> Result<(Estimate, f64)> {
    // contiguous blocks of each chain serve as jackknife groups
    let mut groups: Vec<(usize, usize, usize)> = Vec::new();
    for (c, s) in r0.iter().enumerate() {
        let size = s.len() / BLOCKS_PER_CHAIN;
        if size == 0 {
            return Err(Error::InsufficientData(format!(
                "chain {c} has {} samples",
                s.len()
            )));
        }
        for b in 0..BLOCKS_PER_CHAIN {
            let end = if b + 1 == BLOCKS_PER_CHAIN {
                s.len()
            } else {
                (b + 1) * size
            };
            groups.push((c, b * size, end));
        }
    }
    let stats = |keep: &[usize]| -> (Vec<f64>, Vec<f64>, f64) {
        let nb = bins.len();
        let (mut hits, mut sum_q) = (vec![0.0; nb], vec![0.0; nb]);
        let mut n = 0.0;
        for &g in keep {
            let (c, lo, hi) = groups[g];
            for i in lo..hi {
                let b = bins.index(r0[c][i]);
                hits[b] += 1.0;
                sum_q[b] += tilt[c][i];
                n += 1.0;
            }
        }
        (hits, sum_q, n)
    };
    let bound = |keep: &[usize]| {
        let (hits, sum_q, n) = stats(keep);
        (0..bins.len())
            .filter(|&b| hits[b] > 0.0)
            .map(|b| (bins.nu0[b] * hits[b] / n).sqrt() * (-0.25 * sum_q[b] / hits[b]).exp())
            .sum::<f64>()
    };
    let (mean, stderr) = jackknife(groups.len(), bound)?;
    let all: Vec<usize> = (0..groups.len()).collect();
    let (hits, _, n) = stats(&all);
    let overlap = (0..bins.len())
        .map(|b| (bins.nu0[b] * hits[b] / n).sqrt())
        .sum();
    let n_total = n as usize;
    Ok((
        Estimate {
            mean,
            stderr,
            ess: n_total as f64,
            n: n_total,
        },
        overlap,
    ))
}

/// Number of equal-mass radial bins used by the lower bound.
pub const LOWER_BOUND_BINS: usize = 8;

/// Jensen lower bound over `T` in `d >= 4`.
pub fn convergent_lower_bound(t_list: &[f64], run: &CurveRun<'_>) -> Result<Vec<LowerBoundPoint>> {
    if run.params.d < 4 {
        return Err(Error::UnsupportedDimension(
            run.params.d,
            "4, 5 (lower bound)",
        ));
    }
    run.check(t_list)?;
    let integral = ir_bound_integral(&run.params)?;
    let bins = RadialBins::equal_mass(run.gs, LOWER_BOUND_BINS)?;
    t_list
        .par_iter()
        .enumerate()
        .map(|(idx, &t)| {
            let obs = LowerBoundObs { table: run.table };
            let out = run.point(t, idx, &obs)?;
            let r0 = per_chain(&out, 0);
            let tilt = per_chain(&out, 1);
            let (bound, overlap) = binned_lower_bound(&r0, &tilt, &bins)?;
            if !(bound.mean > 0.0) {
                return Err(Error::Domain(format!(
                    "lower bound {} is not positive at T = {t}",
                    bound.mean
                )));
            }
            let max_tilt = tilt.iter().flatten().copied().fold(0.0, f64::max);
            Ok(LowerBoundPoint {
                t,
                bound,
                analytic: (-integral / 8.0).exp() * overlap,
                max_tilt,
                config_hash: run.config_hash,
            })
        })
        .collect()
}

/// Fitted decay of `cov_N(F1(q_0), F2(q_lag))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub lags: Vec<f64>,
    pub covariances: Vec<Estimate>,
    /// Fit of `C / (lag^γ + 1)`; `None` when fewer than three covariances
    /// are resolved from zero.
    pub fit: Option<TailFit>,
    /// Least-squares log-residual of each lag under the fit.
    pub residuals: Vec<f64>,
}

pub const MIN_DECAY_ESS: f64 = 100.0;

type Scalar<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

struct DecayObs<'a> {
    f1: Scalar<'a>,
    f2: Scalar<'a>,
    lag_beads: Vec<usize>,
}

impl Observable for DecayObs<'_> {
    fn names(&self) -> Vec<String> {
        let mut n = vec!["f1".to_string()];
        n.extend(self.lag_beads.iter().map(|l| format!("f2_lag{l}")));
        n
    }

    fn eval(&self, path: &DiscretizedPath, cfg: &PathConfig, out: &mut Vec<f64>) -> Result<()> {
        let m = cfg.mid();
        out.push((self.f1)(path.bead(m)));
        out.extend(self.lag_beads.iter().map(|&l| (self.f2)(path.bead(m + l))));
        Ok(())
    }
}

/// Samples `N_T` and estimates `cov(F1(q_0), F2(q_lag))` for each lag
/// (`lag <= T`, multiples of `dt`), then fits the `C/(lag^γ + 1)` envelope.
pub fn correlation_decay_fit(
    run: &CurveRun<'_>,
    t_half: f64,
    f1: Scalar<'_>,
    f2: Scalar<'_>,
    lags: &[f64],
) -> Result<DecayReport> {
    run.check(&[t_half])?;
    let lag_beads: Vec<usize> = lags
        .iter()
        .map(|&l| {
            let b = (l / run.dt).round();
            if !(l > 0.0 && l <= t_half && (b * run.dt - l).abs() < 1e-9 * l.max(1.0)) {
                return Err(Error::invalid(
                    "lags",
                    format!("lag {l} is not a positive multiple of dt within T"),
                ));
            }
            Ok(b as usize)
        })
        .collect::<Result<_>>()?;
    let obs = DecayObs { f1, f2, lag_beads };
    let out = run.point(t_half, 0, &obs)?;
    let all = |k: usize| -> Vec<f64> {
        out.iter()
            .flat_map(|o| o.series[k].iter().copied())
            .collect()
    };
    let x = all(0);
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let covariances: Vec<Estimate> = (1..=lags.len())
        .map(|k| {
            let y = all(k);
            let my = y.iter().sum::<f64>() / y.len() as f64;
            let parts: Vec<Estimate> = out
                .iter()
                .map(|o| {
                    let prod: Vec<f64> = o.series[0]
                        .iter()
                        .zip(&o.series[k])
                        .map(|(a, b)| (a - mx) * (b - my))
                        .collect();
                    Estimate::from_series(&prod)
                })
                .collect::<Result<_>>()?;
            Estimate::combine(&parts)
        })
        .collect::<Result<_>>()?;
    let ess = merged(&out, 0)?.ess;
    if ess < MIN_DECAY_ESS && covariances.iter().any(|c| c.stderr > 0.0) {
        return Err(Error::InsufficientData(format!(
            "effective sample size {ess:.0} below {MIN_DECAY_ESS}"
        )));
    }
    let resolved: Vec<(f64, f64)> = lags
        .iter()
        .zip(&covariances)
        .filter(|(_, c)| c.mean > 2.0 * c.stderr && c.stderr > 0.0)
        .map(|(&l, c)| (l, c.mean))
        .collect();
    let (fit, residuals) = if resolved.len() >= 3 {
        let (fit, res) = fit_envelope(&resolved)?;
        (Some(fit), res)
    } else {
        (None, Vec::new())
    };
    Ok(DecayReport {
        lags: lags.to_vec(),
        covariances,
        fit,
        residuals,
    })
}

/// Least-squares fit of `ln c = ln C - ln(lag^γ + 1)`; γ by golden-section search.
fn fit_envelope(points: &[(f64, f64)]) -> Result<(TailFit, Vec<f64>)> {
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let design = |g: f64| -> Vec<f64> { points.iter().map(|p| (p.0.powf(g) + 1.0).ln()).collect() };
    let sse = |g: f64| {
        let x = design(g);
        // best ln C for fixed γ
        let c = ly.iter().zip(&x).map(|(y, x)| y + x).sum::<f64>() / ly.len() as f64;
        ly.iter()
            .zip(&x)
            .map(|(y, x)| (y - c + x).powi(2))
            .sum::<f64>()
    };
    let (mut a, mut b) = (1e-3, 30.0);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if sse(c) < sse(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let gamma = 0.5 * (a + b);
    let x = design(gamma);
    let lin = linear_regression(&x, &ly)?;
    let residuals = x
        .iter()
        .zip(&ly)
        .map(|(x, y)| y - lin.intercept - lin.slope * x)
        .collect();
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    Ok((
        TailFit {
            exponent: gamma,
            exponent_stderr: gamma * lin.slope_stderr,
            window: (lo, hi),
            r2: lin.r2,
        },
        residuals,
    ))
}

/// `G_h(t) = ∫ e^{-|k||t|} |ĥ(k)|² / |k| dk` in `d` dimensions.
pub fn spectral_integral(h: &FormFactor, d: usize, t: f64) -> Result<f64> {
    let t = t.abs();
    let s = sphere_area(d);
    let tol = Tolerance {
        abs: 1e-300,
        rel: 1e-12,
        max_intervals: 4000,
    };
    if t == 0.0 {
        let q = integrate(
            |k| k.powi(d as i32 - 2) * h.eval(k).powi(2),
            0.0,
            h.k_cutoff(),
            &[],
            tol,
        )?;
        return Ok(s * q.value);
    }
    // u = |k| t: G = |S| t^{-(d-1)} ∫ u^{d-2} e^{-u} |ĥ(u/t)|² du
    let u_max = (h.k_cutoff() * t).min(80.0);
    let breaks: Vec<f64> = [0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0]
        .into_iter()
        .filter(|&b| b < u_max)
        .collect();
    let q = integrate(
        |u| u.powi(d as i32 - 2) * (-u).exp() * h.eval(u / t).powi(2),
        0.0,
        u_max,
        &breaks,
        tol,
    )?;
    Ok(s * t.powi(-(d as i32 - 1)) * q.value)
}

fn check_decade(t_list: &[f64]) -> Result<()> {
    check_list(t_list)?;
    if t_list.len() < 3 || !(t_list[0] > 0.0) || t_list[t_list.len() - 1] < 10.0 * t_list[0] {
        return Err(Error::invalid(
            "t_list",
            "need at least 3 positive times spanning one decade",
        ));
    }
    Ok(())
}

/// Log-log fit of `G_h(t)` over the upper half (in `ln t`) of `t_list`; the
/// exponent is `d - 1` when `ĥ(0) ≠ 0`. The lower half only carries the
/// `O(t^{-2})` relative correction from the width of `ĥ`.
pub fn spectral_tail_fit(h: &FormFactor, d: usize, t_list: &[f64]) -> Result<TailFit> {
    check_decade(t_list)?;
    let split = (t_list[0] * t_list[t_list.len() - 1]).sqrt();
    let tail: Vec<f64> = t_list
        .iter()
        .copied()
        .filter(|&t| t >= split * (1.0 - 1e-12))
        .collect();
    let g: Vec<f64> = tail
        .iter()
        .map(|&t| spectral_integral(h, d, t))
        .collect::<Result<_>>()?;
    fit_power_tail(&tail, &g)
}

/// Tail of the double convolution `L₁ * L₁ * L₂` on the real line with
/// `L₁ = 1/(|t|^{d-1} + 1)` and `L₂ = 1/(|t|^γ + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionTail {
    pub fit: TailFit,
    pub values: Vec<f64>,
    /// `2d + γ - 4`.
    pub predicted: f64,
    /// `2d + γ - 4 > d - 1`.
    pub dominance: bool,
}

fn conv_tol() -> Tolerance {
    Tolerance {
        abs: 1e-300,
        rel: 1e-9,
        max_intervals: 20_000,
    }
}

/// Breakpoints on `[-x, x]`: geometric in `|s|` plus the given centers.
fn line_breaks(x: f64, centers: &[f64]) -> Vec<f64> {
    let mut b: Vec<f64> = Vec::new();
    let mut s = 1.0;
    while s < x {
        b.push(s);
        b.push(-s);
        s *= 4.0;
    }
    for &c in centers {
        for o in [-1.0, 0.0, 1.0] {
            b.push(c + o);
        }
    }
    b.retain(|v| v.abs() < x);
    b.sort_by(f64::total_cmp);
    b.dedup();
    b
}

/// Range of the line integrals; the neglected tails are `O(X^{-(d-2)})`
/// relative to the `L₂` tail.
const LINE_RANGE: f64 = 1e7;

/// `(L₁ * L₁)(s)`.
fn l1_self_convolution(d: usize, s: f64) -> Result<f64> {
    let p = d as f64 - 1.0;
    let l1 = |t: f64| 1.0 / (t.abs().powf(p) + 1.0);
    let x = LINE_RANGE + s.abs();
    Ok(integrate(
        |u| l1(u) * l1(s - u),
        -x,
        x,
        &line_breaks(x, &[0.0, s]),
        conv_tol(),
    )?
    .value)
}

pub fn convolution_value(d: usize, gamma: f64, t: f64) -> Result<f64> {
    let l2 = |s: f64| 1.0 / (s.abs().powf(gamma) + 1.0);
    let x = LINE_RANGE + t.abs();
    let mut err = None;
    let q = integrate(
        |s| match l1_self_convolution(d, s) {
            Ok(m) => m * l2(t - s),
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        },
        -x,
        x,
        &line_breaks(x, &[0.0, t]),
        Tolerance {
            rel: 1e-7,
            ..conv_tol()
        },
    )?;
    match err {
        Some(e) => Err(e),
        None => Ok(q.value),
    }
}

/// Evaluates `L₁ * L₁ * L₂` on `t_list` by direct quadrature and fits its tail.
pub fn convolution_tail_exponent(d: usize, gamma: f64, t_list: &[f64]) -> Result<ConvolutionTail> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma", "must be positive"));
    }
    if !(3..=5).contains(&d) {
        return Err(Error::UnsupportedDimension(d, "3, 4, 5"));
    }
    check_decade(t_list)?;
    let values: Vec<f64> = t_list
        .iter()
        .map(|&t| convolution_value(d, gamma, t))
        .collect::<Result<_>>()?;
    let predicted = 2.0 * d as f64 + gamma - 4.0;
    Ok(ConvolutionTail {
        fit: fit_power_tail(t_list, &values)?,
        values,
        predicted,
        dominance: predicted > d as f64 - 1.0,
    })
}
