//! The singular test profile `ŝ(k) = φ(k)/ρ̂(k)` with
//! `φ(k) = ∫_{T*}^∞ e^{-|k|t} / (ln t (ln ln t)^ζ) dt` on `|k| < k*`.

use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{ConfigViolation, Error, Result};
use crate::quadrature::{integrate, Tolerance};
use crate::special::sphere_area;

/// Parameters of the test profile.
///
/// `ref_charge` is the charge of the form factor in the denominator of `ŝ`.
/// It normally equals the model coupling; keeping it separate lets the same
/// profile be used for the uncoupled model, where `ρ̂ ≡ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrTestFunction {
    pub t_star: f64,
    pub zeta: f64,
    pub k_star: f64,
    pub ref_charge: f64,
}

impl IrTestFunction {
    /// `ζ = 1/2`, `T* = e²`, `k* = 1/(2σ)`, reference charge `e` (or 1 if `e = 0`).
    pub fn default_for(params: &ModelParams) -> Self {
        IrTestFunction {
            t_star: std::f64::consts::E * std::f64::consts::E,
            zeta: 0.5,
            k_star: 0.5 / params.sigma,
            ref_charge: if params.e > 0.0 { params.e } else { 1.0 },
        }
    }

    pub fn violations(&self, params: &ModelParams) -> Vec<ConfigViolation> {
        let mut out = Vec::new();
        let mut bad = |key: &str, message: String| {
            out.push(ConfigViolation {
                key: key.into(),
                message,
            })
        };
        if !(self.t_star.is_finite() && self.t_star.ln() > 1.0) {
            bad(
                "test_Tstar",
                format!("need ln T* > 1, got T* = {}", self.t_star),
            );
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            bad("test_zeta", format!("need 0 < zeta < 1, got {}", self.zeta));
        }
        if !(self.k_star > 0.0 && self.k_star.is_finite()) {
            bad("test_kstar", format!("need k* > 0, got {}", self.k_star));
        } else if 0.5 * (params.sigma * self.k_star).powi(2) > 300.0 {
            bad(
                "test_kstar",
                format!(
                    "k* = {} too large: the form factor underflows inside the support (sigma k* = {})",
                    self.k_star,
                    params.sigma * self.k_star
                ),
            );
        }
        if !(self.ref_charge > 0.0 && self.ref_charge.is_finite()) {
            bad(
                "test_ref_charge",
                format!("need a positive reference charge, got {}", self.ref_charge),
            );
        }
        out
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        let v = self.violations(params);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Reference form factor `e_ref exp(-σ²k²/2)` in the denominator of `ŝ`.
    pub fn rho_ref(&self, k: f64, params: &ModelParams) -> f64 {
        self.ref_charge * (-0.5 * params.sigma * params.sigma * k * k).exp()
    }
}

fn tol() -> Tolerance {
    Tolerance {
        abs: 1e-300,
        rel: 1e-12,
        max_intervals: 4000,
    }
}

/// `k φ(k)` as a function of `L = -ln k`.
///
/// Substituting `k t = e^z` gives
/// `k φ = ∫_{ln T* - L}^∞ e^{z - e^z} / ((L + z) (ln(L + z))^ζ) dz`,
/// which stays well conditioned for arbitrarily small `k`.
fn scaled_profile_log(l: f64, test: &IrTestFunction) -> Result<f64> {
    let lo = (test.t_star.ln() - l).max(-40.0);
    let hi = 4.5;
    if lo >= hi {
        return Ok(0.0);
    }
    let zeta = test.zeta;
    let q = integrate(
        |z| {
            let lt = l + z;
            (z - z.exp()).exp() / (lt * lt.ln().powf(zeta))
        },
        lo,
        hi,
        &[-3.0, -1.0, 0.0, 1.0, 2.0],
        tol(),
    )?;
    Ok(q.value)
}

/// `k φ(k)`; finite and positive for every `k > 0`.
pub fn scaled_profile(k: f64, test: &IrTestFunction) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::Domain(format!("profile needs k > 0, got {k}")));
    }
    scaled_profile_log(-k.ln(), test)
}

/// `ŝ(|k|)`; zero for `|k| >= k*`, positive and finite on `0 < |k| < k*`.
pub fn s_hat(k_mag: f64, test: &IrTestFunction, params: &ModelParams) -> Result<f64> {
    test.validate(params)?;
    let k = k_mag.abs();
    if k >= test.k_star {
        return Ok(0.0);
    }
    if k == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(scaled_profile(k, test)? / (k * test.rho_ref(k, params)))
}

/// `‖s‖² = ∫ |ŝ(k)|² / |k| dk`.
pub fn s_norm_sq(test: &IrTestFunction, params: &ModelParams) -> Result<f64> {
    test.validate(params)?;
    let d = params.d;
    let s2 = params.sigma * params.sigma;
    let e2 = test.ref_charge * test.ref_charge;
    // ∫ k^{d-4} (kφ)² / ρ̂² dk with k = e^{-L}, dk = -k dL
    let integrand_l = |l: f64| -> Result<f64> {
        let k = (-l).exp();
        let kp = scaled_profile_log(l, test)?;
        Ok((-(d as f64 - 3.0) * l).exp() * kp * kp * (s2 * k * k).exp() / e2)
    };
    let l_star = -test.k_star.ln();
    let l_knee = l_star.max(0.0) + std::f64::consts::E;
    let mut first_err = None;
    let mut wrap = |l: f64| match integrand_l(l) {
        Ok(v) => v,
        Err(e) => {
            first_err.get_or_insert(e);
            0.0
        }
    };
    let a = integrate(&mut wrap, l_star, l_knee, &[], tol())?.value;
    let y_hi = 35.0;
    let b = integrate(
        |y| wrap(y.exp()) * y.exp(),
        l_knee.ln(),
        y_hi,
        &[2.0, 3.0, 5.0, 10.0],
        tol(),
    )?
    .value;
    if let Some(e) = first_err {
        return Err(e);
    }
    // beyond L = e^35 the integrand is (L (ln L)^ζ)^{-2} / e_ref² in d = 3
    let tail = if d == 3 {
        (-y_hi).exp() / (y_hi.powf(2.0 * test.zeta) * e2)
    } else {
        0.0
    };
    Ok(sphere_area(d) * (a + b + tail))
}
