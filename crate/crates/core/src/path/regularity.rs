//! Empirical path regularity: Hölder-1/8 modulus ratios and the growth of
//! `sup |q_t|` against a `(ln(T + 1))^{1/(α+1)}` envelope.

use serde::Serialize;

use super::{dist, DiscretizedPath, PathConfig};
use crate::error::{Error, Result};
use crate::stats::linear_regression;

pub const MIN_PATHS: usize = 100;

/// Modulus statistics at one separation `δ`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ModulusStat {
    pub delta: f64,
    /// Mean over paths of `sup_{|t-s| <= δ} |q_t - q_s| / δ^{1/8}`.
    pub mean_ratio: f64,
    pub max_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub modulus: Vec<ModulusStat>,
    /// `(T', 99th percentile of sup_{|t| <= T'} |q_t|)`.
    pub sup_quantiles: Vec<(f64, f64)>,
    /// Fitted `C₁, C₂` of `C₁ (ln(T'+1))^{1/(α+1)} + C₂`.
    pub envelope: (f64, f64),
    pub envelope_residuals: Vec<f64>,
}

fn quantile(mut xs: Vec<f64>, q: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let pos = q * (xs.len() - 1) as f64;
    let i = pos.floor() as usize;
    let w = pos - i as f64;
    if i + 1 < xs.len() {
        xs[i] * (1.0 - w) + xs[i + 1] * w
    } else {
        xs[i]
    }
}

/// Computes the report for bead lags `lags` (each `δ = lag · dt`).
pub fn path_regularity_stats(
    paths: &[DiscretizedPath],
    cfg: &PathConfig,
    lags: &[usize],
    alpha: f64,
) -> Result<RegularityReport> {
    if paths.len() < MIN_PATHS {
        return Err(Error::InsufficientData(format!(
            "{} paths; regularity statistics need at least {MIN_PATHS}",
            paths.len()
        )));
    }
    let n = cfg.n_beads();
    let mut modulus = Vec::new();
    for &lag in lags {
        if lag == 0 || lag >= n {
            return Err(Error::invalid("lags", format!("lag {lag} outside 1..{n}")));
        }
        let delta = lag as f64 * cfg.dt;
        let ratios: Vec<f64> = paths
            .iter()
            .map(|p| {
                let mut sup = 0.0f64;
                for i in 0..n {
                    for j in i + 1..(i + lag + 1).min(n) {
                        sup = sup.max(dist(p.bead(i), p.bead(j)));
                    }
                }
                sup / delta.powf(0.125)
            })
            .collect();
        modulus.push(ModulusStat {
            delta,
            mean_ratio: ratios.iter().sum::<f64>() / ratios.len() as f64,
            max_ratio: ratios.iter().copied().fold(0.0, f64::max),
        });
    }
    let mid = cfg.mid();
    let mut sup_quantiles = Vec::new();
    let mut windows: Vec<usize> = [mid / 8, mid / 4, mid / 2, mid]
        .into_iter()
        .filter(|&w| w > 0)
        .collect();
    windows.dedup();
    for w in windows {
        let sups: Vec<f64> = paths
            .iter()
            .map(|p| (mid - w..=mid + w).map(|i| p.radius(i)).fold(0.0, f64::max))
            .collect();
        sup_quantiles.push((w as f64 * cfg.dt, quantile(sups, 0.99)));
    }
    let x: Vec<f64> = sup_quantiles
        .iter()
        .map(|(t, _)| (t + 1.0).ln().powf(1.0 / (alpha + 1.0)))
        .collect();
    let y: Vec<f64> = sup_quantiles.iter().map(|(_, s)| *s).collect();
    let (envelope, envelope_residuals) = if x.len() >= 3 {
        let fit = linear_regression(&x, &y)?;
        let res = x
            .iter()
            .zip(&y)
            .map(|(a, b)| b - fit.intercept - fit.slope * a)
            .collect();
        ((fit.slope, fit.intercept), res)
    } else {
        ((f64::NAN, f64::NAN), Vec::new())
    };
    Ok(RegularityReport {
        modulus,
        sup_quantiles,
        envelope,
        envelope_residuals,
    })
}
