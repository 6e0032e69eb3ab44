//! Ground state of `H_p = -Δ/2 + V` for a radial confining potential.
//!
//! With `u(r) = r^{(d-1)/2} ψ(r)` the radial problem becomes
//! `-u''/2 + (V + (d-1)(d-3)/(8r²)) u = E u` on `(0, r_max)` with Dirichlet
//! ends. It is discretized with Numerov's method; in the variable
//! `y_i = (1 - h²g_i/12) u_i`, `g = 2(V_eff - E)`, the scheme is a symmetric
//! tridiagonal system whose pivot signs count the eigenvalues below `E`, so
//! the ground energy is located by bisection on that count.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::ModelParams;
use crate::special::sphere_area;

const MAGIC: &[u8; 5] = b"NIRG1";
const VERSION: u32 = 1;
/// Default radial grid step.
pub const DEFAULT_STEP: f64 = 0.01;
/// Energy margin `V(r_max) - E` required at the Dirichlet wall.
pub const WALL_MARGIN: f64 = 40.0;
/// Required WKB decay exponent `∫ sqrt(2(V - E)) dr` from the turning point to the wall.
pub const WALL_DECAY: f64 = 20.0;

/// Potential class; only polynomial confinement `C |q|^{2α}` is provided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PotentialClass {
    Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PotentialSpec {
    pub pot_c: f64,
    pub pot_alpha: f64,
    pub class: PotentialClass,
}

impl PotentialSpec {
    pub fn new(pot_c: f64, pot_alpha: f64) -> Result<Self> {
        if !(pot_c > 0.0 && pot_c.is_finite()) {
            return Err(Error::invalid("pot_C", format!("must be > 0, got {pot_c}")));
        }
        if !(pot_alpha >= 1.0 && pot_alpha.is_finite()) {
            return Err(Error::invalid(
                "pot_alpha",
                format!("must be >= 1, got {pot_alpha}"),
            ));
        }
        Ok(PotentialSpec {
            pot_c,
            pot_alpha,
            class: PotentialClass::Polynomial,
        })
    }

    pub fn from_params(params: &ModelParams) -> Result<Self> {
        Self::new(params.pot_c, params.pot_alpha)
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.pot_c * r.abs().powf(2.0 * self.pot_alpha)
    }

    /// Radius where `V(r) = v`.
    fn radius_at(&self, v: f64) -> f64 {
        (v / self.pot_c).powf(0.5 / self.pot_alpha)
    }
}

/// Radial grid for [`solve_ground_state`]. `r_max = None` picks the wall
/// automatically from [`WALL_MARGIN`] and [`WALL_DECAY`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub step: f64,
    pub r_max: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            step: DEFAULT_STEP,
            r_max: None,
        }
    }
}

/// Summary written by the `schrodinger solve` command.
#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    #[serde(rename = "E_p")]
    pub energy: f64,
    pub r_max: f64,
    pub grid_step: f64,
    pub residual: f64,
}

/// Tabulated radial ground state `ψ₀` and energy `E_p`.
#[derive(Debug, Clone)]
pub struct RadialGroundState {
    d: usize,
    pot: PotentialSpec,
    step: f64,
    energy: f64,
    residual: f64,
    /// `u_i` at `r_i = i h`, `i = 0..=n`, with `u_0 = u_n = 0`.
    u: Vec<f64>,
    psi: Vec<f64>,
    spline: CubicSpline,
    cdf: Vec<f64>,
}

fn v_eff(pot: &PotentialSpec, d: usize, r: f64) -> f64 {
    let dd = d as f64;
    pot.eval(r) + (dd - 1.0) * (dd - 3.0) / (8.0 * r * r)
}

struct Numerov {
    h: f64,
    /// `V_eff` at interior nodes `r_1..r_{n-1}`.
    v: Vec<f64>,
}

impl Numerov {
    fn c(&self, i: usize, e: f64) -> (f64, f64) {
        let h2 = self.h * self.h;
        let g = 2.0 * (self.v[i] - e);
        let denom = 1.0 - h2 * g / 12.0;
        (h2 * g / denom, denom)
    }

    /// Number of discrete eigenvalues below `e`.
    fn count_below(&self, e: f64) -> Result<usize> {
        let mut count = 0;
        let mut prev = f64::INFINITY;
        for i in 0..self.v.len() {
            let (c, denom) = self.c(i, e);
            if denom <= 0.0 {
                return Err(Error::Solver(format!(
                    "grid step {} too coarse for V_eff = {:.3e}; reduce the step",
                    self.h, self.v[i]
                )));
            }
            let mut p = 2.0 + c - 1.0 / prev;
            if p == 0.0 {
                p = -1e-300;
            }
            if p < 0.0 {
                count += 1;
            }
            prev = p;
        }
        Ok(count)
    }

    fn ground_energy(&self) -> Result<f64> {
        let mut lo = self.v.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
        let mut hi = lo.abs().max(1.0);
        let mut guard = 0;
        while self.count_below(hi)? == 0 {
            lo = hi;
            hi *= 2.0;
            guard += 1;
            if guard > 200 {
                return Err(Error::Solver("could not bracket the ground energy".into()));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid)? == 0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Eigenvector `u` (interior nodes) at energy `e` by inverse iteration on
    /// the symmetric tridiagonal `K(e) = tridiag(-1, 2 + c_i, -1)`.
    fn eigenvector(&self, e: f64) -> Vec<f64> {
        let n = self.v.len();
        let diag: Vec<f64> = (0..n).map(|i| 2.0 + self.c(i, e).0).collect();
        let mut y = vec![1.0; n];
        for _ in 0..6 {
            y = solve_tridiag_sym(&diag, -1.0, &y);
            let norm = y.iter().map(|x| x * x).sum::<f64>().sqrt();
            y.iter_mut().for_each(|x| *x /= norm);
        }
        (0..n).map(|i| y[i] / self.c(i, e).1).collect()
    }

    /// `‖(-D²/2 + Numerov(V - E)) u‖ / ‖u‖` with `u` zero-padded at the walls.
    fn residual(&self, u: &[f64], e: f64) -> f64 {
        let n = u.len();
        let h2 = self.h * self.h;
        let at = |i: isize| -> (f64, f64) {
            if i < 0 || i as usize >= n {
                (0.0, 0.0)
            } else {
                let i = i as usize;
                (u[i], 2.0 * (self.v[i] - e) * u[i])
            }
        };
        let mut num = 0.0;
        for i in 0..n as isize {
            let (um, gm) = at(i - 1);
            let (u0, g0) = at(i);
            let (up, gp) = at(i + 1);
            let r = (up - 2.0 * u0 + um) / h2 - (gp + 10.0 * g0 + gm) / 12.0;
            num += 0.25 * r * r;
        }
        let den: f64 = u.iter().map(|x| x * x).sum();
        (num / den).sqrt()
    }
}

/// Solves `diag_i x_i + off (x_{i-1} + x_{i+1}) = rhs_i`.
fn solve_tridiag_sym(diag: &[f64], off: f64, rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        denom = 1e-300;
    }
    cp[0] = off / denom;
    dp[0] = rhs[0] / denom;
    for i in 1..n {
        let mut m = diag[i] - off * cp[i - 1];
        if m == 0.0 {
            m = 1e-300;
        }
        cp[i] = off / m;
        dp[i] = (rhs[i] - off * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

fn solve_on_grid(
    pot: &PotentialSpec,
    d: usize,
    step: f64,
    r_max: f64,
) -> Result<(f64, Vec<f64>, f64)> {
    let n = (r_max / step).ceil() as usize;
    if n < 8 {
        return Err(Error::invalid(
            "step",
            format!("grid too coarse: {n} cells on [0, {r_max}]"),
        ));
    }
    let num = Numerov {
        h: step,
        v: (1..n).map(|i| v_eff(pot, d, i as f64 * step)).collect(),
    };
    let e = num.ground_energy()?;
    let mut u = num.eigenvector(e);
    if u.iter().sum::<f64>() < 0.0 {
        u.iter_mut().for_each(|x| *x = -*x);
    }
    if let Some(i) = u.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::Solver(format!(
            "eigenfunction has a node at r = {:.4}; not the ground state",
            (i + 1) as f64 * step
        )));
    }
    let res = num.residual(&u, e);
    let norm = (sphere_area(d) * step * u.iter().map(|x| x * x).sum::<f64>()).sqrt();
    let mut full = Vec::with_capacity(n + 1);
    full.push(0.0);
    full.extend(u.iter().map(|x| x / norm));
    full.push(0.0);
    Ok((e, full, res))
}

/// Smallest radius beyond the turning point with `V - E >= WALL_MARGIN` and
/// WKB decay exponent at least `WALL_DECAY`.
fn wall_radius(pot: &PotentialSpec, e: f64, step: f64) -> f64 {
    let turn = pot.radius_at(e.max(0.0));
    let mut r = turn;
    let mut decay = 0.0;
    let dr = step.min(0.01);
    loop {
        let v = pot.eval(r);
        if v - e >= WALL_MARGIN && decay >= WALL_DECAY {
            return r;
        }
        let mid = r + 0.5 * dr;
        decay += (2.0 * (pot.eval(mid) - e)).max(0.0).sqrt() * dr;
        r += dr;
    }
}

/// Computes the ground state of `-Δ/2 + V` in `d` dimensions.
pub fn solve_ground_state(
    pot: &PotentialSpec,
    d: usize,
    grid: GridSpec,
) -> Result<RadialGroundState> {
    if !(3..=5).contains(&d) {
        return Err(Error::UnsupportedDimension(
            d,
            crate::kernels::SUPPORTED_DIMS,
        ));
    }
    if !(grid.step > 0.0 && grid.step.is_finite()) {
        return Err(Error::invalid(
            "step",
            format!("must be > 0, got {}", grid.step),
        ));
    }
    let r_max = match grid.r_max {
        Some(r) => r,
        None => {
            let coarse_step = grid.step.max(0.02);
            let r_guess = pot.radius_at(100.0).max(2.0);
            let (e1, _, _) = solve_on_grid(pot, d, coarse_step, r_guess)?;
            wall_radius(pot, e1, grid.step)
        }
    };
    let (energy, u, residual) = solve_on_grid(pot, d, grid.step, r_max)?;
    RadialGroundState::from_parts(d, *pot, grid.step, energy, residual, u)
}

impl RadialGroundState {
    fn from_parts(
        d: usize,
        pot: PotentialSpec,
        step: f64,
        energy: f64,
        residual: f64,
        u: Vec<f64>,
    ) -> Result<Self> {
        let n = u.len() - 1;
        let half = (d as f64 - 1.0) / 2.0;
        let mut psi: Vec<f64> = (0..=n)
            .map(|i| {
                if i == 0 {
                    0.0
                } else {
                    u[i] / (i as f64 * step).powf(half)
                }
            })
            .collect();
        // ln ψ is even in r; quadratic extrapolation to the origin
        let f1 = psi[1].ln();
        let f2 = psi[2].ln();
        psi[0] = ((4.0 * f1 - f2) / 3.0).exp();
        let ln_psi: Vec<f64> = psi[..n].iter().map(|p| p.ln()).collect();
        if ln_psi.iter().any(|x| !x.is_finite()) {
            return Err(Error::Solver(
                "ground state underflows inside the domain".into(),
            ));
        }
        let spline = CubicSpline::new(step, ln_psi);
        let area = sphere_area(d);
        let mut cdf = vec![0.0; n + 1];
        for i in 1..=n {
            cdf[i] = cdf[i - 1] + 0.5 * step * area * (u[i - 1] * u[i - 1] + u[i] * u[i]);
        }
        let total = cdf[n];
        cdf.iter_mut().for_each(|c| *c /= total);
        Ok(RadialGroundState {
            d,
            pot,
            step,
            energy,
            residual,
            u,
            psi,
            spline,
            cdf,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.pot
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Position of the Dirichlet wall.
    pub fn wall(&self) -> f64 {
        (self.u.len() - 1) as f64 * self.step
    }

    /// Largest radius where `ψ₀`, `ln ψ₀` and the drift are available.
    pub fn r_max(&self) -> f64 {
        self.spline.max()
    }

    pub fn r_grid(&self) -> Vec<f64> {
        (0..self.psi.len()).map(|i| i as f64 * self.step).collect()
    }

    /// `ψ₀` at grid nodes (the last node is the wall, where it vanishes).
    pub fn psi_grid(&self) -> &[f64] {
        &self.psi
    }

    /// `|S^{d-1}| ∫ r^{d-1} ψ₀² dr` on the grid.
    pub fn norm(&self) -> f64 {
        sphere_area(self.d) * self.step * self.u.iter().map(|x| x * x).sum::<f64>()
    }

    pub fn summary(&self) -> SolveSummary {
        SolveSummary {
            energy: self.energy,
            r_max: self.wall(),
            grid_step: self.step,
            residual: self.residual,
        }
    }

    fn check_radius(&self, r: f64) -> Result<()> {
        if r.is_finite() && r <= self.r_max() {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "radius {r} outside the ground-state domain [0, {}]",
                self.r_max()
            )))
        }
    }

    pub fn ln_psi(&self, r: f64) -> Result<f64> {
        self.check_radius(r)?;
        Ok(self.spline.eval(r).0)
    }

    pub fn psi(&self, r: f64) -> Result<f64> {
        Ok(self.ln_psi(r)?.exp())
    }

    /// `d/dr ln ψ₀`.
    pub fn dln_psi(&self, r: f64) -> Result<f64> {
        self.check_radius(r)?;
        Ok(self.spline.eval(r).1)
    }

    /// `∇ ln ψ₀(q)`; zero at the origin.
    pub fn drift(&self, q: &[f64]) -> Result<Vec<f64>> {
        let r = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if r == 0.0 {
            return Ok(vec![0.0; q.len()]);
        }
        let g = self.dln_psi(r)?;
        Ok(q.iter().map(|x| g * x / r).collect())
    }

    /// Cumulative distribution of `|q|` under `ψ₀² dq`.
    pub fn radial_cdf(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let x = r / self.step;
        let i = x.floor() as usize;
        if i + 1 >= self.cdf.len() {
            return 1.0;
        }
        let w = x - i as f64;
        self.cdf[i] * (1.0 - w) + self.cdf[i + 1] * w
    }

    fn sample_radius<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let i = self
            .cdf
            .partition_point(|&c| c <= u)
            .clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        ((i - 1) as f64 + w) * self.step
    }

    /// One draw from `ν⁰ = ψ₀² dq`.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let r = self.sample_radius(rng);
        let mut dir: Vec<f64> = (0..self.d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|x| *x *= r / norm);
        dir
    }

    /// `count` independent draws from `ν⁰`.
    pub fn sample_nu0<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.sample_one(rng)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut go = || -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            w.write_u32::<LittleEndian>(VERSION)?;
            w.write_u32::<LittleEndian>(self.d as u32)?;
            for x in [
                self.pot.pot_c,
                self.pot.pot_alpha,
                self.step,
                self.energy,
                self.residual,
            ] {
                w.write_f64::<LittleEndian>(x)?;
            }
            w.write_u64::<LittleEndian>(self.u.len() as u64)?;
            for &x in &self.u {
                w.write_f64::<LittleEndian>(x)?;
            }
            w.flush()
        };
        go().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let fmt = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let io = |e: std::io::Error| fmt(format!("truncated or unreadable: {e}"));
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(fmt("not a ground-state file (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io)?;
        if version != VERSION {
            return Err(fmt(format!("unsupported version {version}")));
        }
        let d = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut vals = [0.0; 5];
        for v in vals.iter_mut() {
            *v = r.read_f64::<LittleEndian>().map_err(io)?;
        }
        let n = r.read_u64::<LittleEndian>().map_err(io)? as usize;
        if !(8..=1 << 26).contains(&n) {
            return Err(fmt(format!("implausible grid size {n}")));
        }
        let mut u = vec![0.0; n];
        r.read_f64_into::<LittleEndian>(&mut u).map_err(io)?;
        let pot = PotentialSpec::new(vals[0], vals[1])?;
        Self::from_parts(d, pot, vals[2], vals[3], vals[4], u)
    }
}

/// Cubic spline on a uniform grid from `0`, with zero slope at the origin and
/// a fourth-order one-sided slope estimate at the far end.
#[derive(Debug, Clone)]
struct CubicSpline {
    h: f64,
    f: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    fn new(h: f64, f: Vec<f64>) -> Self {
        let n = f.len() - 1;
        let end_slope = (25.0 * f[n] - 48.0 * f[n - 1] + 36.0 * f[n - 2] - 16.0 * f[n - 3]
            + 3.0 * f[n - 4])
            / (12.0 * h);
        // moments M_i: clamped conditions at both ends
        let mut sub = vec![1.0; n + 1];
        let mut diag = vec![4.0; n + 1];
        let mut sup = vec![1.0; n + 1];
        let mut rhs = vec![0.0; n + 1];
        for i in 1..n {
            rhs[i] = 6.0 * (f[i + 1] - 2.0 * f[i] + f[i - 1]) / (h * h);
        }
        diag[0] = 2.0;
        sup[0] = 1.0;
        rhs[0] = 6.0 * ((f[1] - f[0]) / h) / h;
        diag[n] = 2.0;
        sub[n] = 1.0;
        rhs[n] = 6.0 * (end_slope - (f[n] - f[n - 1]) / h) / h;
        // Thomas algorithm
        for i in 1..=n {
            let w = sub[i] / diag[i - 1];
            diag[i] -= w * sup[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        let mut m = vec![0.0; n + 1];
        m[n] = rhs[n] / diag[n];
        for i in (0..n).rev() {
            m[i] = (rhs[i] - sup[i] * m[i + 1]) / diag[i];
        }
        CubicSpline { h, f, m }
    }

    fn max(&self) -> f64 {
        (self.f.len() - 1) as f64 * self.h
    }

    /// Value and first derivative.
    fn eval(&self, x: f64) -> (f64, f64) {
        let h = self.h;
        let n = self.f.len() - 1;
        let i = ((x / h).floor() as usize).min(n - 1);
        let a = (i as f64 + 1.0) * h - x;
        let b = x - i as f64 * h;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let (f0, f1) = (self.f[i], self.f[i + 1]);
        let val = m0 * a * a * a / (6.0 * h)
            + m1 * b * b * b / (6.0 * h)
            + (f0 / h - m0 * h / 6.0) * a
            + (f1 / h - m1 * h / 6.0) * b;
        let der = -m0 * a * a / (2.0 * h) + m1 * b * b / (2.0 * h) - (f0 / h - m0 * h / 6.0)
            + (f1 / h - m1 * h / 6.0);
        (val, der)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spline_reproduces_quadratic() {
        let h = 0.1;
        let f: Vec<f64> = (0..50).map(|i| -0.5 * (i as f64 * h).powi(2)).collect();
        let s = CubicSpline::new(h, f);
        for &x in &[0.0, 0.05, 1.23, 4.85] {
            let (v, d) = s.eval(x);
            assert!((v + 0.5 * x * x).abs() < 1e-12);
            assert!((d + x).abs() < 1e-11);
        }
    }

    #[test]
    fn tridiagonal_solver() {
        let diag = [4.0, 4.0, 4.0];
        let x = solve_tridiag_sym(&diag, 1.0, &[5.0, 6.0, 5.0]);
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn sturm_count_harmonic_levels() {
        // d = 3 radial harmonic levels (l = 0): 1.5, 3.5, 5.5
        let pot = PotentialSpec::new(0.5, 1.0).unwrap();
        let h = 0.01;
        let num = Numerov {
            h,
            v: (1..1000).map(|i| v_eff(&pot, 3, i as f64 * h)).collect(),
        };
        assert_eq!(num.count_below(1.4).unwrap(), 0);
        assert_eq!(num.count_below(1.6).unwrap(), 1);
        assert_eq!(num.count_below(5.6).unwrap(), 3);
    }

    #[test]
    fn rejects_unsupported_dimension() {
        let pot = PotentialSpec::new(1.0, 2.0).unwrap();
        assert!(matches!(
            solve_ground_state(&pot, 2, GridSpec::default()),
            Err(Error::UnsupportedDimension(2, _))
        ));
    }
}
