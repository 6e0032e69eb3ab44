//! Monte Carlo estimators: batch-means errors, integrated autocorrelation
//! times, regression fits, and distribution distances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A Monte Carlo estimate of an expectation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Batch-means standard error.
    pub stderr: f64,
    /// Effective sample size from the integrated autocorrelation time.
    pub ess: f64,
    pub n: usize,
}

impl Estimate {
    /// An exactly known value (zero error).
    pub fn exact(value: f64) -> Self {
        Estimate {
            mean: value,
            stderr: 0.0,
            ess: f64::INFINITY,
            n: 0,
        }
    }

    pub fn from_series(xs: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "{n} samples; need at least 2"
            )));
        }
        if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                name: "series".into(),
                step: i as u64,
            });
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        if var == 0.0 {
            return Ok(Estimate {
                mean,
                stderr: 0.0,
                ess: n as f64,
                n,
            });
        }
        let tau = integrated_autocorr_time(xs);
        let ess = (n as f64 / tau).clamp(1.0, n as f64);
        Ok(Estimate {
            mean,
            stderr: batch_means_stderr(xs, mean),
            ess,
            n,
        })
    }

    /// Combines independent estimates (e.g. chains) of the same quantity,
    /// weighting by sample count.
    pub fn combine(parts: &[Estimate]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::InsufficientData("no estimates to combine".into()));
        }
        let total: usize = parts.iter().map(|p| p.n).sum();
        if total == 0 {
            return Ok(parts[0]);
        }
        let nt = total as f64;
        let mean = parts.iter().map(|p| p.mean * p.n as f64).sum::<f64>() / nt;
        let var = parts
            .iter()
            .map(|p| (p.stderr * p.n as f64 / nt).powi(2))
            .sum::<f64>();
        Ok(Estimate {
            mean,
            stderr: var.sqrt(),
            ess: parts.iter().map(|p| p.ess).sum::<f64>().min(nt),
            n: total,
        })
    }

    /// `|a - b| / sqrt(se_a² + se_b²)`; infinite when both errors vanish and values differ.
    pub fn z_distance(&self, other: &Estimate) -> f64 {
        let diff = (self.mean - other.mean).abs();
        let se = self.stderr.hypot(other.stderr);
        if se == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / se
        }
    }
}

/// Standard error from non-overlapping batch means with about `√n` batches.
pub fn batch_means_stderr(xs: &[f64], mean: f64) -> f64 {
    let n = xs.len();
    let n_batches = ((n as f64).sqrt().floor() as usize).clamp(2, 1000).min(n);
    let size = n / n_batches;
    let means: Vec<f64> = (0..n_batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (n_batches - 1) as f64;
    (var / n_batches as f64).sqrt()
}

/// Autocovariance `γ(ℓ)` for `ℓ = 0..=max_lag`, normalized by `n`.
pub fn autocovariance(xs: &[f64], max_lag: usize) -> Vec<f64> {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    (0..=max_lag.min(n.saturating_sub(1)))
        .map(|l| {
            (0..n - l)
                .map(|i| (xs[i] - mean) * (xs[i + l] - mean))
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

/// Integrated autocorrelation time `1 + 2 Σ ρ(ℓ)` with Sokal's
/// self-consistent window `M >= 5 τ(M)`.
pub fn integrated_autocorr_time(xs: &[f64]) -> f64 {
    let n = xs.len();
    let max_lag = (n / 2).min(20_000);
    let acov = autocovariance(xs, max_lag);
    if acov[0] <= 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for (m, g) in acov.iter().enumerate().skip(1) {
        tau += 2.0 * g / acov[0];
        if m as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

/// Least-squares line `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r2: f64,
}

pub fn linear_regression(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return Err(Error::InsufficientData(format!(
            "regression needs >= 3 paired points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData(
            "regression abscissae are all equal".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (1.0 - sse / syy).clamp(0.0, 1.0)
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr: (sse / (nf - 2.0) / sxx).sqrt(),
        r2,
    })
}

/// Power-law tail `g(t) ~ t^{-exponent}` fitted by log-log regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub exponent: f64,
    pub exponent_stderr: f64,
    pub window: (f64, f64),
    pub r2: f64,
}

pub fn fit_power_tail(t: &[f64], g: &[f64]) -> Result<TailFit> {
    if t.iter().zip(g).any(|(&a, &b)| !(a > 0.0 && b > 0.0)) {
        return Err(Error::Domain(
            "power-law fit needs positive abscissae and values".into(),
        ));
    }
    let lx: Vec<f64> = t.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = g.iter().map(|x| x.ln()).collect();
    let fit = linear_regression(&lx, &ly)?;
    let lo = t.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(TailFit {
        exponent: -fit.slope,
        exponent_stderr: fit.slope_stderr,
        window: (lo, hi),
        r2: fit.r2,
    })
}

/// Kolmogorov–Smirnov distance between the empirical law of `samples` and `cdf`.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut best) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}

/// Jackknife mean and standard error of `f` over `groups` of samples
/// (leave one group out).
pub fn jackknife<F: Fn(&[usize]) -> f64>(n_groups: usize, f: F) -> Result<(f64, f64)> {
    if n_groups < 2 {
        return Err(Error::InsufficientData(
            "jackknife needs >= 2 groups".into(),
        ));
    }
    let all: Vec<usize> = (0..n_groups).collect();
    let full = f(&all);
    let loo: Vec<f64> = (0..n_groups)
        .map(|g| {
            let keep: Vec<usize> = all.iter().copied().filter(|&x| x != g).collect();
            f(&keep)
        })
        .collect();
    let ng = n_groups as f64;
    let mean_loo = loo.iter().sum::<f64>() / ng;
    let var = (ng - 1.0) / ng * loo.iter().map(|x| (x - mean_loo).powi(2)).sum::<f64>();
    Ok((full, var.sqrt()))
}
