//! Analytic kernels of the model: the charge form factor, the effective pair
//! potential `W(q, t)` obtained by integrating out the field, the free field
//! covariance, the infrared criterion integral, and the singular test profile
//! used to detect mutual singularity of the interacting and free measures.

mod table;
mod test_function;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigViolation, Error, Result};
use crate::quadrature::{integrate, Quad, Tolerance};
use crate::special::{angular_factor, angular_factor_deriv, sphere_area};

pub use table::{Axis, KernelTable, TimeSlice, DEFAULT_TABLE_RESOLUTION, TABLE_TOLERANCE};
pub use test_function::{s_hat, s_norm_sq, scaled_profile, IrTestFunction};

/// Supported spatial dimensions.
pub const SUPPORTED_DIMS: &str = "3, 4, 5";

/// Upper momentum cutoff in units of `1/sigma`; `exp(-144)` is below any
/// tolerance used in the crate.
pub const K_MAX_SIGMAS: f64 = 12.0;

/// Physical parameters shared by every kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Spatial dimension.
    pub d: usize,
    /// Total charge `∫ρ = e`; the coupling strength.
    pub e: f64,
    /// Width of the Gaussian charge distribution.
    pub sigma: f64,
    /// Scale `C` of the confining potential `V(q) = C |q|^{2α}`.
    pub pot_c: f64,
    /// Exponent `α` of the confining potential.
    pub pot_alpha: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            d: 3,
            e: 0.3,
            sigma: 1.0,
            pot_c: 1.0,
            pot_alpha: 2.0,
        }
    }
}

impl ModelParams {
    pub fn new(d: usize, e: f64, sigma: f64, pot_c: f64, pot_alpha: f64) -> Result<Self> {
        let p = ModelParams {
            d,
            e,
            sigma,
            pot_c,
            pot_alpha,
        };
        p.validate()?;
        Ok(p)
    }

    /// Harmonic reference model `V = |q|^2 / 2` in `d = 3`.
    pub fn harmonic(e: f64) -> Self {
        ModelParams {
            d: 3,
            e,
            sigma: 1.0,
            pot_c: 0.5,
            pot_alpha: 1.0,
        }
    }

    pub fn with_e(self, e: f64) -> Self {
        ModelParams { e, ..self }
    }

    pub fn with_d(self, d: usize) -> Self {
        ModelParams { d, ..self }
    }

    pub fn violations(&self) -> Vec<ConfigViolation> {
        let mut out = Vec::new();
        let mut bad = |key: &str, message: String| {
            out.push(ConfigViolation {
                key: key.to_string(),
                message,
            })
        };
        if !(3..=5).contains(&self.d) {
            bad(
                "d",
                format!(
                    "unsupported dimension {} (supported: {SUPPORTED_DIMS})",
                    self.d
                ),
            );
        }
        if !(self.e >= 0.0 && self.e.is_finite()) {
            bad(
                "e",
                format!("coupling must be finite and >= 0, got {}", self.e),
            );
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            bad(
                "sigma",
                format!("charge width must be > 0, got {}", self.sigma),
            );
        }
        if !(self.pot_c > 0.0 && self.pot_c.is_finite()) {
            bad(
                "pot_C",
                format!("potential scale must be > 0, got {}", self.pot_c),
            );
        }
        if !(self.pot_alpha > 0.0 && self.pot_alpha.is_finite()) {
            bad(
                "pot_alpha",
                format!("potential exponent must be > 0, got {}", self.pot_alpha),
            );
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else if v.len() == 1 && v[0].key == "d" {
            Err(Error::UnsupportedDimension(self.d, SUPPORTED_DIMS))
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn k_max(&self) -> f64 {
        K_MAX_SIGMAS / self.sigma
    }

    /// Confining potential at radius `r`.
    pub fn potential(&self, r: f64) -> f64 {
        self.pot_c * r.powf(2.0 * self.pot_alpha)
    }
}

/// Shape of the charge distribution. Only Gaussian charges are provided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ChargeKind {
    #[default]
    Gaussian,
}

/// Radial charge distribution `ρ` with `∫ρ = e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargeDistribution {
    pub kind: ChargeKind,
    pub e: f64,
    pub sigma: f64,
}

impl ChargeDistribution {
    pub fn from_params(params: &ModelParams) -> Self {
        ChargeDistribution {
            kind: ChargeKind::Gaussian,
            e: params.e,
            sigma: params.sigma,
        }
    }

    /// Form factor `ρ̂(k) = ∫ρ(x) e^{-ik·x} dx` at `|k| = k_mag`.
    pub fn form_factor(&self, k_mag: f64) -> f64 {
        match self.kind {
            ChargeKind::Gaussian => self.e * (-0.5 * self.sigma * self.sigma * k_mag * k_mag).exp(),
        }
    }

    /// Density `ρ(x)` in `d` dimensions at radius `r`.
    pub fn density(&self, d: usize, r: f64) -> f64 {
        match self.kind {
            ChargeKind::Gaussian => {
                let s2 = self.sigma * self.sigma;
                self.e * (2.0 * PI * s2).powf(-(d as f64) / 2.0) * (-0.5 * r * r / s2).exp()
            }
        }
    }
}

/// `ρ̂(|k|) = e exp(-σ²k²/2)`.
pub fn rho_hat(k_mag: f64, params: &ModelParams) -> f64 {
    ChargeDistribution::from_params(params).form_factor(k_mag.abs())
}

/// Which partial derivative of `W` to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WPart {
    Value,
    DR,
    DT,
    DRDT,
}

/// Integrand of `W` per unit charge at momentum `k`, without the `-|S|/8` prefactor.
pub(crate) fn w_integrand(d: usize, sigma: f64, k: f64, r: f64, t: f64, part: WPart) -> f64 {
    let base = k.powi(d as i32 - 2) * (-sigma * sigma * k * k - k * t).exp();
    match part {
        WPart::Value => base * angular_factor(d, k * r),
        WPart::DR => base * k * angular_factor_deriv(d, k * r),
        WPart::DT => -base * k * angular_factor(d, k * r),
        WPart::DRDT => -base * k * k * angular_factor_deriv(d, k * r),
    }
}

/// Prefactor `-e²|S^{d-1}|/8` multiplying the radial integral of `W`.
pub(crate) fn w_prefactor(params: &ModelParams) -> f64 {
    -params.e * params.e * sphere_area(params.d) / 8.0
}

/// Approximate zeros of `A_d(x)`, i.e. of `J_{d/2-1}` (McMahon).
fn angular_zeros(d: usize, x_max: f64) -> Vec<f64> {
    let nu = d as f64 / 2.0 - 1.0;
    let mut out = Vec::new();
    for m in 1.. {
        let beta = (m as f64 + nu / 2.0 - 0.25) * PI;
        let z = beta - (4.0 * nu * nu - 1.0) / (8.0 * beta);
        if z >= x_max {
            break;
        }
        out.push(z);
    }
    out
}

/// Adaptive evaluation of `W` (or a derivative) with its error estimate.
pub fn pair_kernel_quad(r: f64, t: f64, params: &ModelParams, part: WPart) -> Result<Quad> {
    params.validate()?;
    if r < 0.0 || t < 0.0 || !r.is_finite() || !t.is_finite() {
        return Err(Error::Domain(format!(
            "W requires r, t >= 0, got r = {r}, t = {t}"
        )));
    }
    if params.e == 0.0 {
        return Ok(Quad {
            value: 0.0,
            error: 0.0,
        });
    }
    let d = params.d;
    let sigma = params.sigma;
    let k_max = params.k_max();
    let mut breaks: Vec<f64> = [0.25, 0.5, 1.0, 2.0, 4.0]
        .iter()
        .map(|c| c / sigma)
        .collect();
    if t > 0.0 {
        breaks.extend([0.5 / t, 2.0 / t, 8.0 / t]);
    }
    if r > 0.0 {
        breaks.extend(angular_zeros(d, k_max * r).into_iter().map(|z| z / r));
    }
    let tol = Tolerance {
        abs: 1e-16,
        rel: 1e-12,
        max_intervals: 20_000,
    };
    let q = integrate(
        |k| w_integrand(d, sigma, k, r, t, part),
        0.0,
        k_max,
        &breaks,
        tol,
    )?;
    // Gaussian tail beyond k_max, bounded with |A_d| <= 1 (and |A_d'| <= 1)
    let tail_pow = d as i32 - 2 + if matches!(part, WPart::Value) { 0 } else { 2 };
    let tail = k_max.powi(tail_pow) * (-sigma * sigma * k_max * k_max).exp()
        / (2.0 * sigma * sigma * k_max);
    let pre = w_prefactor(params);
    Ok(Quad {
        value: pre * q.value,
        error: pre.abs() * (q.error + tail),
    })
}

/// `W(q, t) = -(1/8) ∫ |ρ̂(k)|²/|k| cos(k·q) e^{-|k||t|} dk` at `|q| = r`,
/// computed by radial reduction and adaptive quadrature in `|k|`.
pub fn pair_kernel_momentum(r: f64, t: f64, params: &ModelParams) -> Result<f64> {
    Ok(pair_kernel_quad(r, t.abs(), params, WPart::Value)?.value)
}

/// `W` from its position-space form `-(π/2) ∫∫ ρ(x)ρ(y) / (|q+x-y|² + t²)`,
/// three dimensions only.
///
/// For Gaussian charges `x - y` is Gaussian with variance `2σ²` per axis and
/// mass `e²`; the angular average of `1/(|q+u|² + t²)` over the direction of
/// `u` is done analytically, leaving a one-dimensional integral over `|u|`.
pub fn pair_kernel_position(r: f64, t: f64, params: &ModelParams) -> Result<f64> {
    params.validate()?;
    if params.d != 3 {
        return Err(Error::UnsupportedDimension(
            params.d,
            "3 (position-space form)",
        ));
    }
    if r < 0.0 || !r.is_finite() || !t.is_finite() {
        return Err(Error::Domain(format!(
            "W requires finite r >= 0, got r = {r}, t = {t}"
        )));
    }
    if params.e == 0.0 {
        return Ok(0.0);
    }
    let t = t.abs();
    let sigma = params.sigma;
    let var4 = 4.0 * sigma * sigma;
    let norm = 4.0 * PI * (PI * var4).powf(-1.5);
    // s² · (angular average of 1/(|q+u|²+t²)) for |u| = s
    let weighted = |s: f64| -> f64 {
        let g = (-s * s / var4).exp();
        if r == 0.0 {
            if s == 0.0 && t == 0.0 {
                return norm;
            }
            return norm * g * s * s / (s * s + t * t);
        }
        let dd = (r - s) * (r - s) + t * t;
        if dd == 0.0 {
            return f64::INFINITY;
        }
        norm * g * s * (4.0 * r * s / dd).ln_1p() / (4.0 * r)
    };
    let s_max = 20.0 * sigma;
    let mut breaks = vec![sigma, 2.0 * sigma, 4.0 * sigma, 8.0 * sigma];
    if r > 0.0 {
        breaks.push(r);
        breaks.push(0.5 * r);
        breaks.push(1.5 * r);
    }
    let tol = Tolerance {
        abs: 1e-16,
        rel: 1e-12,
        max_intervals: 20_000,
    };
    let q = integrate(weighted, 0.0, s_max, &breaks, tol)?;
    Ok(-0.5 * PI * params.e * params.e * q.value)
}

/// A radial test-function form factor `ĥ(k) = a |k|^p exp(-w²k²/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormFactor {
    pub amplitude: f64,
    pub power: u32,
    pub width: f64,
}

impl FormFactor {
    pub fn gaussian(width: f64) -> Self {
        FormFactor {
            amplitude: 1.0,
            power: 0,
            width,
        }
    }

    pub fn eval(&self, k: f64) -> f64 {
        self.amplitude * k.powi(self.power as i32) * (-0.5 * self.width * self.width * k * k).exp()
    }

    /// Momentum beyond which `|ĥ|` is negligible (below `e^{-60}` of its scale).
    pub fn k_cutoff(&self) -> f64 {
        (120f64.sqrt() + (2.0 * self.power as f64).sqrt() + 1.0) / self.width
    }

    pub fn at_zero(&self) -> f64 {
        if self.power == 0 {
            self.amplitude
        } else {
            0.0
        }
    }
}

/// Stationary free-field covariance
/// `E[ξ_s(h1) ξ_t(h2)] = (1/4) ∫ ĥ1(k) ĥ2(k)* / |k| e^{-|k||s-t|} dk`
/// for radial form factors.
pub fn field_covariance(
    h1: &FormFactor,
    h2: &FormFactor,
    dt: f64,
    params: &ModelParams,
) -> Result<f64> {
    params.validate()?;
    let d = params.d;
    let dt = dt.abs();
    let k_max = h1.k_cutoff().min(h2.k_cutoff());
    let scale = h1.width.max(h2.width);
    let mut breaks: Vec<f64> = [0.25, 0.5, 1.0, 2.0, 4.0]
        .iter()
        .map(|c| c / scale)
        .collect();
    if dt > 0.0 {
        breaks.extend([0.5 / dt, 2.0 / dt, 8.0 / dt]);
    }
    let q = integrate(
        |k| k.powi(d as i32 - 2) * h1.eval(k) * h2.eval(k) * (-k * dt).exp(),
        0.0,
        k_max,
        &breaks,
        Tolerance::new(1e-300, 1e-12),
    )?;
    Ok(0.25 * sphere_area(d) * q.value)
}

/// `I(ε) = ∫_{ε <= |k| <= 1} |ρ̂(k)|² / |k|³ dk` for each `ε` in `eps_list`.
///
/// In three dimensions `I(ε)` grows like `4π e² ln(1/ε)`; for `d >= 4` it
/// converges as `ε -> 0`.
pub fn ir_criterion_scan(eps_list: &[f64], params: &ModelParams) -> Result<Vec<(f64, f64)>> {
    params.validate()?;
    let d = params.d as i32;
    let s2 = params.sigma * params.sigma;
    let pre = params.e * params.e * sphere_area(params.d);
    eps_list
        .iter()
        .map(|&eps| {
            if !(eps > 0.0 && eps <= 1.0) {
                return Err(Error::Domain(format!(
                    "IR cutoff must lie in (0, 1], got {eps}"
                )));
            }
            // k = e^u: ∫ k^{d-4} e^{-σ²k²} dk = ∫ e^{(d-3)u} e^{-σ² e^{2u}} du
            let lo = eps.ln();
            let breaks: Vec<f64> = (1..64).map(|j| -(j as f64)).collect();
            let q = integrate(
                |u| ((d - 3) as f64 * u - s2 * (2.0 * u).exp()).exp(),
                lo,
                0.0,
                &breaks,
                Tolerance::new(1e-300, 1e-13),
            )?;
            Ok((eps, pre * q.value))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn unit() -> ModelParams {
        ModelParams {
            e: 1.0,
            ..ModelParams::default()
        }
    }

    #[test]
    fn rho_hat_values() {
        assert_eq!(rho_hat(0.0, &ModelParams::default().with_e(0.5)), 0.5);
        assert!((rho_hat(2.0, &unit()) - (-2f64).exp()).abs() < 1e-16);
        assert_eq!(rho_hat(-1.3, &unit()), rho_hat(1.3, &unit()));
    }

    #[test]
    fn charge_density_integrates_to_e() {
        let c = ChargeDistribution::from_params(&ModelParams::default().with_e(0.7));
        for d in 3..=5 {
            let q = integrate(
                |r| sphere_area(d) * r.powi(d as i32 - 1) * c.density(d, r),
                0.0,
                20.0,
                &[1.0, 2.0],
                Tolerance::default(),
            )
            .unwrap();
            assert!((q.value - 0.7).abs() < 1e-10);
        }
    }

    #[test]
    fn w_at_origin_closed_form() {
        let w = pair_kernel_momentum(0.0, 0.0, &unit()).unwrap();
        assert!((w + PI / 4.0).abs() < 1e-12, "{w}");
        let w = pair_kernel_position(0.0, 0.0, &unit()).unwrap();
        assert!((w + PI / 4.0).abs() < 1e-10, "{w}");
    }

    #[test]
    fn w_negative_and_even() {
        let p = unit();
        assert!(pair_kernel_momentum(1.0, 1.0, &p).unwrap() < 0.0);
        assert_eq!(
            pair_kernel_momentum(1.0, -2.0, &p).unwrap(),
            pair_kernel_momentum(1.0, 2.0, &p).unwrap()
        );
    }

    #[test]
    fn position_form_zero_charge_and_dimension_check() {
        assert_eq!(
            pair_kernel_position(1.0, 0.5, &unit().with_e(0.0)).unwrap(),
            0.0
        );
        assert!(matches!(
            pair_kernel_position(1.0, 0.5, &unit().with_d(4)),
            Err(Error::UnsupportedDimension(4, _))
        ));
    }

    #[test]
    fn representations_agree_off_origin() {
        let p = unit();
        for &(r, t) in &[(0.0, 1.0), (0.7, 0.0), (2.0, 0.3), (5.0, 5.0), (0.01, 0.0)] {
            let a = pair_kernel_momentum(r, t, &p).unwrap();
            let b = pair_kernel_position(r, t, &p).unwrap();
            assert!(((a - b) / a).abs() < 1e-8, "r={r} t={t}: {a} vs {b}");
        }
    }

    #[test]
    fn w_scales_with_charge_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let r: f64 = rng.random_range(0.0..6.0);
            let t: f64 = rng.random_range(0.0..6.0);
            let e = rng.random_range(0.05..2.0);
            let a = pair_kernel_momentum(r, t, &unit().with_e(e)).unwrap();
            let b = pair_kernel_momentum(r, t, &unit().with_e(2.0 * e)).unwrap();
            assert_eq!(b, 4.0 * a);
        }
    }

    #[test]
    fn higher_dim_angular_factor_matches_monte_carlo_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        for d in [4usize, 5] {
            for &x in &[0.5, 2.5, 7.0] {
                let mut sum = 0.0;
                for _ in 0..n {
                    let v: Vec<f64> = (0..d)
                        .map(|_| rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                    sum += (x * v[0] / norm).cos();
                }
                let mc = sum / n as f64;
                // per-sample standard deviation is at most 1
                assert!(
                    (mc - angular_factor(d, x)).abs() < 5.0 / (n as f64).sqrt(),
                    "d={d} x={x}"
                );
            }
        }
    }

    #[test]
    fn covariance_gaussian_closed_form() {
        let h = FormFactor::gaussian(1.0);
        let c = field_covariance(&h, &h, 0.0, &unit()).unwrap();
        assert!((c - PI / 2.0).abs() < 1e-11, "{c}");
        let c1 = field_covariance(&h, &h, 1.0, &unit()).unwrap();
        let c5 = field_covariance(&h, &h, 5.0, &unit()).unwrap();
        assert!(c5 <= c1 && c1 <= c && c5 > 0.0);
        let g = FormFactor {
            amplitude: 2.0,
            power: 1,
            width: 0.7,
        };
        assert_eq!(
            field_covariance(&h, &g, 0.4, &unit()).unwrap(),
            field_covariance(&g, &h, 0.4, &unit()).unwrap()
        );
    }

    #[test]
    fn covariance_gram_matrices_are_psd() {
        let h = FormFactor::gaussian(1.0);
        let p = unit();
        for times in [[0.0, 0.3, 0.9, 2.0, 5.0], [0.0, 0.01, 0.02, 0.03, 0.04]] {
            let m = nalgebra::DMatrix::from_fn(5, 5, |i, j| {
                field_covariance(&h, &h, times[i] - times[j], &p).unwrap()
            });
            let eig = m.symmetric_eigen();
            assert!(
                eig.eigenvalues.iter().all(|&l| l > -1e-10),
                "{:?}",
                eig.eigenvalues
            );
        }
    }

    #[test]
    fn ir_scan_empty_domain_and_log_increment() {
        let p = unit();
        let v = ir_criterion_scan(&[1.0, 1e-3, 1e-4], &p).unwrap();
        assert_eq!(v[0].1, 0.0);
        let inc = v[2].1 - v[1].1;
        let target = 4.0 * PI * 10f64.ln();
        assert!(((inc - target) / target).abs() < 0.01, "{inc} vs {target}");
        assert!(ir_criterion_scan(&[0.0], &p).is_err());
    }

    #[test]
    fn ir_scan_converges_in_four_dimensions() {
        let p = unit().with_d(4);
        let v = ir_criterion_scan(&[1e-3, 1e-6], &p).unwrap();
        let inc = v[1].1 - v[0].1;
        assert!(inc > 0.0 && inc <= 4.0 * PI * PI * 1e-3, "{inc}");
    }
}
