//! Angular averages of plane waves over the unit sphere and the Bessel
//! functions they reduce to.
//!
//! For a unit vector `n` uniformly distributed on the sphere in `d` dimensions,
//! `E[exp(i x n·e)] = Γ(d/2) (2/x)^{d/2-1} J_{d/2-1}(x)`. This is the radial
//! reduction used by every k-space integral in the crate.

use std::f64::consts::PI;

/// Largest dimension for which [`angular_factor`] is implemented. Derivatives
/// need `d + 2`, so the public kernels support `d <= 5`.
pub const MAX_ANGULAR_DIM: usize = 7;

/// `Γ(d/2)` for integer `d >= 1`.
pub fn gamma_half(d: usize) -> f64 {
    assert!(d >= 1);
    // Γ(1/2) = √π, Γ(1) = 1, Γ(x + 1) = x Γ(x)
    let mut g = if d.is_multiple_of(2) { 1.0 } else { PI.sqrt() };
    let mut x = if d.is_multiple_of(2) { 1.0 } else { 0.5 };
    while 2.0 * x < d as f64 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Surface area of the unit sphere `S^{d-1}`.
pub fn sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / gamma_half(d)
}

/// Integer-order Bessel function `J_n(x)` for `x >= 0`.
///
/// Power series below `x = 2`; above that the periodic trapezoid rule on
/// `J_n(x) = (1/2π) ∫ cos(nθ - x sin θ) dθ`, which converges geometrically once
/// the node count exceeds `x` by a margin.
pub fn bessel_jn(n: u32, x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 2.0 {
        let half = 0.5 * x;
        let mut term = half.powi(n as i32);
        for m in 1..=n {
            term /= m as f64;
        }
        let mut sum = term;
        let q = -half * half;
        for m in 1..40 {
            term *= q / (m as f64 * (m + n) as f64);
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        return sum;
    }
    let nodes = (1.5 * x) as usize + 32 + n as usize;
    let step = 2.0 * PI / nodes as f64;
    let mut sum = 0.0;
    for j in 0..nodes {
        let theta = j as f64 * step;
        sum += (n as f64 * theta - x * theta.sin()).cos();
    }
    sum / nodes as f64
}

/// Spherical average of `exp(i x n·e)` over `S^{d-1}`, `3 <= d <= 7`.
///
/// Equals `sin(x)/x` for `d = 3` and `2 J_1(x)/x` for `d = 4`.
pub fn angular_factor(d: usize, x: f64) -> f64 {
    let x = x.abs();
    debug_assert!((3..=MAX_ANGULAR_DIM).contains(&d));
    if x < 2.0 {
        return angular_series(d, x);
    }
    match d {
        3 => x.sin() / x,
        4 => 2.0 * bessel_jn(1, x) / x,
        5 => 3.0 * (x.sin() - x * x.cos()) / (x * x * x),
        6 => 8.0 * bessel_jn(2, x) / (x * x),
        7 => {
            let (s, c) = x.sin_cos();
            let j2 = (3.0 / (x * x) - 1.0) * s / x - 3.0 * c / (x * x);
            15.0 * j2 / (x * x)
        }
        _ => unreachable!("angular factor requested for d = {d}"),
    }
}

/// `d/dx` of [`angular_factor`]; uses `A_d'(x) = -x A_{d+2}(x) / d`.
pub fn angular_factor_deriv(d: usize, x: f64) -> f64 {
    debug_assert!(d + 2 <= MAX_ANGULAR_DIM);
    -x * angular_factor(d + 2, x) / d as f64
}

// Σ_m (-1)^m Γ(ν+1) / (m! Γ(m+ν+1)) (x/2)^{2m}, ν = d/2 - 1
fn angular_series(d: usize, x: f64) -> f64 {
    let nu = d as f64 / 2.0 - 1.0;
    let q = -0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for m in 1..40 {
        let mf = m as f64;
        term *= q / (mf * (mf + nu));
        sum += term;
        if term.abs() < 1e-18 {
            break;
        }
    }
    sum
}

/// `(1 - e^{-x}) / x`, accurate for small `x >= 0`.
pub fn exprel_neg(x: f64) -> f64 {
    if x < 1e-5 {
        1.0 - x / 2.0 + x * x / 6.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// `(1 - (1 + x) e^{-x}) / x^2`, accurate for small `x >= 0`.
pub fn exprel2_neg(x: f64) -> f64 {
    if x < 0.5 {
        // Σ_{n>=0} (-1)^n x^n (n+1) / (n+2)!
        let mut sum = 0.0;
        let mut pow = 1.0;
        let mut fact = 2.0; // (n+2)!
        for n in 0..24 {
            let nf = n as f64;
            sum += pow * (nf + 1.0) / fact;
            pow *= -x;
            fact *= nf + 3.0;
        }
        sum
    } else {
        (-(-x).exp_m1() - x * (-x).exp()) / (x * x)
    }
}
