//! Conditional Gaussian field statistics given a particle path.
//!
//! Given `Q`, the field is Gaussian with the free covariance and mean
//! `ĝ^t_T(k;Q) = -(ρ̂(k)/4|k|) ∫_{-T}^{T} e^{-ik·q_τ} e^{-|k||t-τ|} dτ`.
//! The τ-integral is done by product integration: `e^{-ik·q_τ}` is
//! interpolated linearly between beads and integrated exactly against the
//! exponential, so `|ĝ^t_T| <= |ρ̂|/(2|k|²)` holds for the discrete values too.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::{rho_hat, s_norm_sq, scaled_profile, FormFactor, IrTestFunction, ModelParams};
use crate::path::{DiscretizedPath, PathConfig};
use crate::quadrature::{gauss_legendre, graded_edges, CompositeRule};
use crate::special::{angular_factor, exprel2_neg, exprel_neg, sphere_area};

/// Largest exponent passed to `exp` before clamping.
const EXP_CLAMP: f64 = 700.0;

/// Product-integration weights `∫ λ_i(τ) e^{-k|τ - t_c|} dτ` of the bead hat
/// functions `λ_i` around bead `center`. They are nonnegative and sum to
/// `∫_{-T}^{T} e^{-k|τ - t_c|} dτ` exactly.
pub fn product_weights(k: f64, center: usize, cfg: &PathConfig) -> Vec<f64> {
    let n = cfg.n_beads();
    let h = cfg.dt;
    let x = k * h;
    let far = exprel2_neg(x);
    let near = exprel_neg(x) - far;
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let (near_idx, far_idx, gap) = if i >= center {
            (i, i + 1, (i - center) as f64 * h)
        } else {
            (i + 1, i, (center - i - 1) as f64 * h)
        };
        let scale = h * (-k * gap).exp();
        w[near_idx] += scale * near;
        w[far_idx] += scale * far;
    }
    w
}

fn check_path(path: &DiscretizedPath, cfg: &PathConfig) -> Result<()> {
    if path.n_beads() != cfg.n_beads() || path.d() != cfg.d {
        return Err(Error::invalid(
            "path",
            format!(
                "path has {} beads in d = {}, config expects {} beads in d = {}",
                path.n_beads(),
                path.d(),
                cfg.n_beads(),
                cfg.d
            ),
        ));
    }
    Ok(())
}

fn k_norm(k: &[f64]) -> f64 {
    k.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `ĝ^t_T(k;Q)` at the time of bead `center`.
pub fn g_hat(
    k: &[f64],
    center: usize,
    path: &DiscretizedPath,
    cfg: &PathConfig,
    params: &ModelParams,
) -> Result<Complex64> {
    check_path(path, cfg)?;
    if k.len() != cfg.d {
        return Err(Error::invalid(
            "k",
            format!("wavevector has {} components, expected {}", k.len(), cfg.d),
        ));
    }
    if center >= cfg.n_beads() {
        return Err(Error::invalid(
            "center",
            format!("bead {center} outside the path"),
        ));
    }
    let kk = k_norm(k);
    if !(kk > 0.0) {
        return Err(Error::Domain("ĝ is singular at k = 0".into()));
    }
    if params.e == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let w = product_weights(kk, center, cfg);
    let mut sum = Complex64::new(0.0, 0.0);
    for (i, wi) in w.iter().enumerate() {
        let phase: f64 = path.bead(i).iter().zip(k).map(|(q, kc)| q * kc).sum();
        sum += Complex64::from_polar(*wi, -phase);
    }
    Ok(-rho_hat(kk, params) / (4.0 * kk) * sum)
}

/// `ĝ⁰_T(k;Q)`, the conditional mean at time zero.
pub fn g_hat0(
    k: &[f64],
    path: &DiscretizedPath,
    cfg: &PathConfig,
    params: &ModelParams,
) -> Result<Complex64> {
    g_hat(k, cfg.mid(), path, cfg, params)
}

/// `m̂_T(k;Q) = 4|k| ĝ⁰_T(k;Q)`.
pub fn m_hat(
    k: &[f64],
    path: &DiscretizedPath,
    cfg: &PathConfig,
    params: &ModelParams,
) -> Result<Complex64> {
    Ok(4.0 * k_norm(k) * g_hat0(k, path, cfg, params)?)
}

/// Largest ratio `|ĝ^{t+dt} - ĝ^t| / (|ρ̂(k)|/(2|k|) · dt)` over adjacent
/// beads: an empirical Lipschitz constant of `t ↦ ĝ^t_T(k;Q)`.
pub fn g_hat_lipschitz(
    k: &[f64],
    path: &DiscretizedPath,
    cfg: &PathConfig,
    params: &ModelParams,
) -> Result<f64> {
    let kk = k_norm(k);
    let scale = rho_hat(kk, params) / (2.0 * kk) * cfg.dt;
    if scale == 0.0 {
        return Ok(0.0);
    }
    let mut prev = g_hat(k, 0, path, cfg, params)?;
    let mut worst = 0.0f64;
    for c in 1..cfg.n_beads() {
        let cur = g_hat(k, c, path, cfg, params)?;
        worst = worst.max((cur - prev).norm() / scale);
        prev = cur;
    }
    Ok(worst)
}

/// The test functional `F = exp(ξ(s))` evaluated against the conditional
/// field law: `E[F | Q] = exp(∫ ŝ ĝ⁰_T dk + ‖s‖²/8)`.
///
/// The k-integral is reduced to a radial one (the angular average of
/// `e^{-ik·q}` is `A_d(|k||q|)`) and evaluated with a fixed Gauss–Legendre
/// rule on `(0, k*)` that is graded toward `k = 0`, so the per-path cost is
/// one pass over beads per node.
#[derive(Debug, Clone)]
pub struct SingularityFunctional {
    cfg: PathConfig,
    d: usize,
    nodes: Vec<f64>,
    /// Quadrature weight times the radial factor of the integrand.
    coef: Vec<f64>,
    /// Product weights around `t = 0`, node-major.
    weights: Vec<f64>,
    s_norm_sq: f64,
}

impl SingularityFunctional {
    pub fn new(test: &IrTestFunction, params: &ModelParams, cfg: &PathConfig) -> Result<Self> {
        params.validate()?;
        test.validate(params)?;
        if cfg.d != params.d {
            return Err(Error::invalid("d", "path and model dimensions differ"));
        }
        let k_star = test.k_star;
        let floor = 1e-10 / (1.0 + cfg.t_half);
        let edges = graded_edges(floor, 0.5 * k_star, k_star, 1.5, k_star / 8.0);
        let rule = CompositeRule::from_edges(&edges, 10);
        let d = params.d;
        // ∫ d^dk ŝ ĝ = -(|S|/4)(e/e_ref) ∫ k^{d-3} (kφ) Σ_i w_i(k) A_d(k r_i) dk
        let pre = -0.25 * sphere_area(d) * params.e / test.ref_charge;
        let mut coef = Vec::with_capacity(rule.len());
        let mut weights = Vec::with_capacity(rule.len() * cfg.n_beads());
        for (&k, &wq) in rule.nodes.iter().zip(&rule.weights) {
            coef.push(pre * wq * k.powi(d as i32 - 3) * scaled_profile(k, test)?);
            weights.extend(product_weights(k, cfg.mid(), cfg));
        }
        Ok(SingularityFunctional {
            cfg: *cfg,
            d,
            nodes: rule.nodes,
            coef,
            weights,
            s_norm_sq: s_norm_sq(test, params)?,
        })
    }

    pub fn s_norm_sq(&self) -> f64 {
        self.s_norm_sq
    }

    /// `E[F]` for the uncoupled field, `exp(‖s‖²/8)`.
    pub fn baseline(&self) -> f64 {
        (self.s_norm_sq / 8.0).exp()
    }

    /// `∫ ŝ(k) ĝ⁰_T(k;Q) dk`.
    pub fn overlap(&self, path: &DiscretizedPath) -> Result<f64> {
        check_path(path, &self.cfg)?;
        let n = self.cfg.n_beads();
        let radii: Vec<f64> = (0..n).map(|i| path.radius(i)).collect();
        let mut total = 0.0;
        for (a, (&k, &c)) in self.nodes.iter().zip(&self.coef).enumerate() {
            if c == 0.0 {
                continue;
            }
            let w = &self.weights[a * n..(a + 1) * n];
            let s: f64 = w
                .iter()
                .zip(&radii)
                .map(|(wi, r)| wi * angular_factor(self.d, k * r))
                .sum();
            total += c * s;
        }
        Ok(total)
    }

    /// `E[F | Q]`.
    pub fn expectation(&self, path: &DiscretizedPath) -> Result<f64> {
        let arg = self.overlap(path)? + self.s_norm_sq / 8.0;
        if arg > EXP_CLAMP {
            log::warn!("E[F | Q] exponent {arg:.3e} clamped to {EXP_CLAMP}");
            return Ok(EXP_CLAMP.exp());
        }
        Ok(arg.exp())
    }

    /// `min(E[F | Q], cap)`.
    pub fn capped(&self, path: &DiscretizedPath, cap: f64) -> Result<f64> {
        Ok(self.expectation(path)?.min(cap))
    }
}

/// `E[F | Q]` for a single path (builds the quadrature each call).
pub fn conditional_f_expectation(
    path: &DiscretizedPath,
    test: &IrTestFunction,
    cfg: &PathConfig,
    params: &ModelParams,
) -> Result<f64> {
    SingularityFunctional::new(test, params, cfg)?.expectation(path)
}

/// Discretization of half of three-dimensional k-space into modes: midpoint
/// nodes in `|k|`, Gauss–Legendre nodes in `cos θ ∈ (0, 1)` and uniform
/// azimuths. Each mode stands for the pair `±k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeGrid {
    pub k_max: f64,
    pub n_radial: usize,
    pub n_cos: usize,
    pub n_phi: usize,
    k: Vec<[f64; 3]>,
    kmag: Vec<f64>,
    volume: Vec<f64>,
}

/// Standard normal coordinates of a free field on a [`ModeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ModeGrid {
    pub fn new(k_max: f64, n_radial: usize, n_cos: usize, n_phi: usize) -> Result<Self> {
        if !(k_max > 0.0 && k_max.is_finite()) || n_radial == 0 || n_cos == 0 || n_phi == 0 {
            return Err(Error::invalid(
                "mode grid",
                "needs k_max > 0 and nonzero node counts",
            ));
        }
        let h = k_max / n_radial as f64;
        let (xc, wc) = gauss_legendre(n_cos);
        let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
        let mut k = Vec::with_capacity(n_radial * n_cos * n_phi);
        let mut kmag = Vec::with_capacity(k.capacity());
        let mut volume = Vec::with_capacity(k.capacity());
        for ir in 0..n_radial {
            let r = (ir as f64 + 0.5) * h;
            for (x, w) in xc.iter().zip(&wc) {
                let c = 0.5 * (x + 1.0);
                let s = (1.0 - c * c).sqrt();
                for ip in 0..n_phi {
                    let phi = (ip as f64 + 0.5) * dphi;
                    k.push([r * s * phi.cos(), r * s * phi.sin(), r * c]);
                    kmag.push(r);
                    volume.push(r * r * h * 0.5 * w * dphi);
                }
            }
        }
        Ok(ModeGrid {
            k_max,
            n_radial,
            n_cos,
            n_phi,
            k,
            kmag,
            volume,
        })
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    /// Free covariance `(1/4) ∫ ĥ1 ĥ2 e^{-|k| dt} / |k| dk` summed over modes.
    pub fn covariance(&self, h1: &FormFactor, h2: &FormFactor, dt: f64) -> f64 {
        self.kmag
            .iter()
            .zip(&self.volume)
            .map(|(&k, &v)| 2.0 * v * h1.eval(k) * h2.eval(k) * (-k * dt.abs()).exp() / (4.0 * k))
            .sum()
    }

    /// A draw from the free field law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldSample {
        let n = self.len();
        let re = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let im = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        FieldSample { re, im }
    }

    fn amplitude(&self, j: usize) -> f64 {
        (2.0 * self.volume[j] / (4.0 * self.kmag[j])).sqrt()
    }

    /// `ξ(h)` for a radial real form factor.
    pub fn evaluate(&self, sample: &FieldSample, h: &FormFactor) -> Result<f64> {
        self.check(sample)?;
        Ok((0..self.len())
            .map(|j| self.amplitude(j) * h.eval(self.kmag[j]) * sample.re[j])
            .sum())
    }

    fn check(&self, sample: &FieldSample) -> Result<()> {
        if sample.re.len() != self.len() || sample.im.len() != self.len() {
            return Err(Error::invalid(
                "field sample",
                format!(
                    "sample has {} modes, grid has {}",
                    sample.re.len(),
                    self.len()
                ),
            ));
        }
        Ok(())
    }

    /// `ĝ⁰_T` at every mode.
    pub fn g_hat0(
        &self,
        path: &DiscretizedPath,
        cfg: &PathConfig,
        params: &ModelParams,
    ) -> Result<Vec<Complex64>> {
        if cfg.d != 3 {
            return Err(Error::UnsupportedDimension(cfg.d, "3 (mode grid)"));
        }
        self.k
            .iter()
            .map(|k| g_hat0(k, path, cfg, params))
            .collect()
    }

    /// `2 ∫ |ĝ⁰_T|² |k| dk` over the grid.
    pub fn quadratic_term(&self, g: &[Complex64]) -> f64 {
        g.iter()
            .zip(&self.kmag)
            .zip(&self.volume)
            .map(|((gj, k), v)| 2.0 * 2.0 * v * gj.norm_sqr() * k)
            .sum()
    }

    /// The linear term `∫ ξ m_T dx` of the density, with `m̂ = 4|k| ĝ⁰`.
    pub fn linear_term(&self, sample: &FieldSample, g: &[Complex64]) -> Result<f64> {
        self.check(sample)?;
        Ok((0..self.len())
            .map(|j| {
                let m = 4.0 * self.kmag[j] * g[j];
                self.amplitude(j) * (m.re * sample.re[j] + m.im * sample.im[j])
            })
            .sum())
    }
}

/// `ln(d𝕡^Q_T / dγ)(ξ) = ∫ ξ m_T dx - 2 ∫ |ĝ⁰_T|² |k| dk` on a mode grid.
///
/// The coefficient 2 is the Gaussian tilt identity: the quadratic term is
/// half the variance of the linear term under the free field law.
pub fn density_log_vs_free(
    sample: &FieldSample,
    grid: &ModeGrid,
    path: &DiscretizedPath,
    cfg: &PathConfig,
    params: &ModelParams,
) -> Result<f64> {
    grid.check(sample)?;
    if params.e == 0.0 {
        return Ok(0.0);
    }
    let g = grid.g_hat0(path, cfg, params)?;
    Ok(grid.linear_term(sample, &g)? - grid.quadratic_term(&g))
}

/// Test functions and times at which the field is sampled. With a mode grid
/// the covariance is the grid sum, otherwise it is computed by quadrature.
#[derive(Debug, Clone)]
pub struct FieldSampleSpec {
    pub tests: Vec<FormFactor>,
    pub times: Vec<f64>,
    pub grid: Option<ModeGrid>,
}

impl FieldSampleSpec {
    /// Column labels `h<j>@<t>`, test-major.
    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        for j in 0..self.tests.len() {
            for t in &self.times {
                out.push(format!("h{j}@{t}"));
            }
        }
        out
    }

    fn entries(&self) -> Vec<(FormFactor, f64)> {
        self.tests
            .iter()
            .flat_map(|h| self.times.iter().map(move |&t| (*h, t)))
            .collect()
    }

    pub fn covariance(&self, params: &ModelParams) -> Result<DMatrix<f64>> {
        let e = self.entries();
        let n = e.len();
        let mut m = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let dt = e[a].1 - e[b].1;
                let c = match &self.grid {
                    Some(g) => g.covariance(&e[a].0, &e[b].0, dt),
                    None => crate::kernels::field_covariance(&e[a].0, &e[b].0, dt, params)?,
                };
                m[(a, b)] = c;
                m[(b, a)] = c;
            }
        }
        Ok(m)
    }

    /// Conditional means `∫ ĥ(k) ĝ^t_T(k;Q) dk`; zero without a path.
    pub fn mean(
        &self,
        path: Option<&DiscretizedPath>,
        cfg: &PathConfig,
        params: &ModelParams,
    ) -> Result<Vec<f64>> {
        let e = self.entries();
        let Some(path) = path else {
            return Ok(vec![0.0; e.len()]);
        };
        check_path(path, cfg)?;
        e.iter()
            .map(|(h, t)| {
                let center = bead_at(*t, cfg)?;
                radial_mean(h, center, path, cfg, params)
            })
            .collect()
    }
}

fn bead_at(t: f64, cfg: &PathConfig) -> Result<usize> {
    let i = cfg.index_of(t);
    if (cfg.time(i) - t).abs() > 1e-9 * cfg.dt.max(1.0) {
        return Err(Error::invalid(
            "times",
            format!("t = {t} is not a bead time of the path grid"),
        ));
    }
    Ok(i)
}

/// `∫ ĥ ĝ^t dk = -(|S|/4) ∫ k^{d-2} ĥ ρ̂ Σ_i w_i(k) A_d(k r_i) dk`.
fn radial_mean(
    h: &FormFactor,
    center: usize,
    path: &DiscretizedPath,
    cfg: &PathConfig,
    params: &ModelParams,
) -> Result<f64> {
    if params.e == 0.0 {
        return Ok(0.0);
    }
    let d = params.d;
    let upper = h.k_cutoff().min(params.k_max());
    let knee = (1.0 / params.sigma).min(0.5 * upper);
    let edges = graded_edges(1e-8 * knee, knee, upper, 1.5, 0.25 * knee);
    let rule = CompositeRule::from_edges(&edges, 16);
    let n = cfg.n_beads();
    let radii: Vec<f64> = (0..n).map(|i| path.radius(i)).collect();
    let pre = -0.25 * sphere_area(d);
    let total = rule.integrate(|k| {
        let w = product_weights(k, center, cfg);
        let s: f64 = w
            .iter()
            .zip(&radii)
            .map(|(wi, r)| wi * angular_factor(d, k * r))
            .sum();
        k.powi(d as i32 - 2) * h.eval(k) * rho_hat(k, params) * s
    });
    Ok(pre * total)
}

/// `count` joint draws of `ξ_{t_j}(h_j)` under the conditional field law
/// given `path` (or the free law without one). The covariance is factored by
/// Cholesky with a relative jitter of `1e-12`.
pub fn sample_field_at_times<R: Rng + ?Sized>(
    spec: &FieldSampleSpec,
    path: Option<&DiscretizedPath>,
    cfg: &PathConfig,
    params: &ModelParams,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let cov = spec.covariance(params)?;
    let mean = DVector::from_vec(spec.mean(path, cfg, params)?);
    let n = cov.nrows();
    let scale = (0..n)
        .map(|i| cov[(i, i)].abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let jittered = &cov + DMatrix::identity(n, n) * (1e-12 * scale);
    let Some(chol) = jittered.cholesky() else {
        let min_eigenvalue = cov.symmetric_eigen().eigenvalues.min();
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue });
    };
    let l = chol.l();
    Ok((0..count)
        .map(|_| {
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            (&mean + &l * z).iter().copied().collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_weights_sum_to_exact_integral() {
        let cfg = PathConfig::new(2.0, 0.25, 3).unwrap();
        for &k in &[1e-6, 0.3, 2.0, 40.0] {
            for center in [0, 3, cfg.mid(), cfg.n_beads() - 1] {
                let w = product_weights(k, center, &cfg);
                assert!(w.iter().all(|&x| x >= 0.0));
                let t = cfg.time(center);
                let exact = -((-k * (2.0 - t)).exp_m1() + (-k * (2.0 + t)).exp_m1()) / k;
                let sum: f64 = w.iter().sum();
                assert!(
                    (sum - exact).abs() < 1e-12 * exact.max(1.0),
                    "k={k} c={center}"
                );
            }
        }
    }

    #[test]
    fn small_k_weights_reduce_to_trapezoid() {
        let cfg = PathConfig::new(1.0, 0.5, 3).unwrap();
        let w = product_weights(1e-12, cfg.mid(), &cfg);
        for (i, wi) in w.iter().enumerate() {
            assert!((wi - cfg.weight(i)).abs() < 1e-10);
        }
    }
}
