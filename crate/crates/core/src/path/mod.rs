//! Discretized particle paths on `[-T, T]` and the finite-volume Gibbs
//! measure `N_T ∝ exp(-∫∫ W) dN⁰` over them.
//!
//! The reference measure `N⁰` is the stationary `P(φ)₁` process: Brownian
//! increments weighted by `ψ₀(q_{-T}) ψ₀(q_T) exp(-∫(V - E_p))`. Both time
//! integrals use the trapezoid rule on the bead grid.

pub mod checkpoint;
pub mod lattice;
pub mod mcmc;
pub mod regularity;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigViolation, Error, Result};
use crate::kernels::{KernelTable, TimeSlice};
use crate::schrodinger::RadialGroundState;

pub use mcmc::{
    merge_estimates, run_chain, run_chains, Chain, ChainOutput, ChainSetup, CheckpointSpec,
    McmcConfig, MoveKind, MoveTally, Observable, Tuner,
};
pub use regularity::{path_regularity_stats, RegularityReport};

/// Time grid of a path: beads at `-T, -T + dt, ..., T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    /// Half-window `T`.
    pub t_half: f64,
    pub dt: f64,
    pub d: usize,
}

impl PathConfig {
    pub fn new(t_half: f64, dt: f64, d: usize) -> Result<Self> {
        let c = PathConfig { t_half, dt, d };
        let v = c.violations();
        if v.is_empty() {
            Ok(c)
        } else {
            Err(Error::Config(v))
        }
    }

    /// Checks `dt > 0`, `n_beads >= 3`, and that `T/dt` is an integer so a
    /// bead sits at `t = 0` (the past/future split needs it).
    pub fn violations(&self) -> Vec<ConfigViolation> {
        let mut out = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            out.push(ConfigViolation {
                key: "dt".into(),
                message: format!("must be > 0, got {}", self.dt),
            });
            return out;
        }
        if !(self.t_half > 0.0 && self.t_half.is_finite()) {
            out.push(ConfigViolation {
                key: "T".into(),
                message: format!("must be > 0, got {}", self.t_half),
            });
            return out;
        }
        let ratio = self.t_half / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
            out.push(ConfigViolation {
                key: "dt".into(),
                message: format!("T/dt must be a positive integer, got {ratio}"),
            });
        }
        out
    }

    /// Number of intervals `2T/dt`.
    pub fn n_intervals(&self) -> usize {
        2 * (self.t_half / self.dt).round() as usize
    }

    pub fn n_beads(&self) -> usize {
        self.n_intervals() + 1
    }

    /// Index of the bead at `t = 0`.
    pub fn mid(&self) -> usize {
        self.n_intervals() / 2
    }

    pub fn time(&self, i: usize) -> f64 {
        (i as f64 - self.mid() as f64) * self.dt
    }

    /// Trapezoid weight of bead `i`.
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n_beads() {
            0.5 * self.dt
        } else {
            self.dt
        }
    }

    /// Bead index nearest to time `t`.
    pub fn index_of(&self, t: f64) -> usize {
        let i = (t / self.dt).round() + self.mid() as f64;
        i.clamp(0.0, (self.n_beads() - 1) as f64) as usize
    }
}

/// Bead positions, stored bead-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedPath {
    d: usize,
    coords: Vec<f64>,
}

impl DiscretizedPath {
    pub fn zeros(n_beads: usize, d: usize) -> Self {
        DiscretizedPath {
            d,
            coords: vec![0.0; n_beads * d],
        }
    }

    pub fn from_coords(d: usize, coords: Vec<f64>) -> Result<Self> {
        if d == 0 || !coords.len().is_multiple_of(d) {
            return Err(Error::invalid(
                "coords",
                format!("length {} not a multiple of d = {d}", coords.len()),
            ));
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("coords", "non-finite coordinate"));
        }
        Ok(DiscretizedPath { d, coords })
    }

    pub fn from_fn<F: FnMut(usize) -> Vec<f64>>(n_beads: usize, d: usize, mut f: F) -> Self {
        let mut coords = Vec::with_capacity(n_beads * d);
        for i in 0..n_beads {
            let q = f(i);
            assert_eq!(q.len(), d);
            coords.extend(q);
        }
        DiscretizedPath { d, coords }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_beads(&self) -> usize {
        self.coords.len() / self.d
    }

    pub fn bead(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn bead_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn radius(&self, i: usize) -> f64 {
        norm(self.bead(i))
    }

    pub fn reflected(&self) -> Self {
        let n = self.n_beads();
        DiscretizedPath::from_fn(n, self.d, |i| self.bead(n - 1 - i).to_vec())
    }
}

pub(crate) fn norm(q: &[f64]) -> f64 {
    q.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn check_dims(path: &DiscretizedPath, cfg: &PathConfig) -> Result<()> {
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

/// `ln ψ₀(q_{-T}) + ln ψ₀(q_T) - Σ w_i (V(q_i) - E_p)`.
pub fn reference_log_weight(
    path: &DiscretizedPath,
    gs: &RadialGroundState,
    cfg: &PathConfig,
) -> Result<f64> {
    check_dims(path, cfg)?;
    let n = cfg.n_beads();
    let e_p = gs.energy();
    let mut out = gs.ln_psi(path.radius(0))? + gs.ln_psi(path.radius(n - 1))?;
    for i in 0..n {
        let r = path.radius(i);
        if r > gs.r_max() {
            return Err(Error::Domain(format!(
                "bead {i} at radius {r} beyond {}",
                gs.r_max()
            )));
        }
        out -= cfg.weight(i) * (gs.potential().eval(r) - e_p);
    }
    Ok(out)
}

/// `-Σ |q_{i+1} - q_i|² / (2 dt)`, the Brownian increment log-density.
pub fn kinetic_log_weight(path: &DiscretizedPath, cfg: &PathConfig) -> f64 {
    let n = path.n_beads();
    (0..n - 1)
        .map(|i| {
            let d = dist(path.bead(i), path.bead(i + 1));
            -d * d / (2.0 * cfg.dt)
        })
        .sum()
}

/// Time slices of the table for every bead-lag multiple of `dt`.
pub(crate) fn lag_slices(table: &KernelTable, cfg: &PathConfig) -> Vec<Option<TimeSlice>> {
    (0..cfg.n_beads())
        .map(|l| table.slice(l as f64 * cfg.dt))
        .collect()
}

pub(crate) fn w_lag(
    table: &KernelTable,
    slices: &[Option<TimeSlice>],
    r: f64,
    lag: usize,
    dt: f64,
) -> f64 {
    match &slices[lag] {
        Some(s) => table.w_slice(r, s),
        None => table.w(r, lag as f64 * dt),
    }
}

/// `S = Σ_i Σ_j w_i w_j W(|q_i - q_j|, |t_i - t_j|)`, the trapezoid rule for
/// `∫∫_{[-T,T]²} W(q_t - q_s, t - s) ds dt`.
pub fn interaction_action(
    path: &DiscretizedPath,
    table: &KernelTable,
    cfg: &PathConfig,
) -> Result<f64> {
    check_dims(path, cfg)?;
    if table.params().e == 0.0 {
        return Ok(0.0);
    }
    let slices = lag_slices(table, cfg);
    let n = cfg.n_beads();
    let mut total = 0.0;
    for i in 0..n {
        let wi = cfg.weight(i);
        let mut row = 0.5 * wi * w_lag(table, &slices, 0.0, 0, cfg.dt);
        for j in i + 1..n {
            row += cfg.weight(j)
                * w_lag(
                    table,
                    &slices,
                    dist(path.bead(i), path.bead(j)),
                    j - i,
                    cfg.dt,
                );
        }
        total += 2.0 * wi * row;
    }
    Ok(total)
}

/// `2 ∫_{-T}^0 ∫_0^T W(q_t - q_s, t - s) dt ds`: the interaction between the
/// past and future halves of the path.
pub fn cross_action(path: &DiscretizedPath, table: &KernelTable, cfg: &PathConfig) -> Result<f64> {
    check_dims(path, cfg)?;
    if table.params().e == 0.0 {
        return Ok(0.0);
    }
    let slices = lag_slices(table, cfg);
    let n = cfg.n_beads();
    let mid = cfg.mid();
    let half_weight = |i: usize| {
        if i == 0 || i == mid || i + 1 == n {
            0.5 * cfg.dt
        } else {
            cfg.dt
        }
    };
    let mut total = 0.0;
    for i in 0..=mid {
        let wi = half_weight(i);
        let mut row = 0.0;
        for j in mid..n {
            row += half_weight(j)
                * w_lag(
                    table,
                    &slices,
                    dist(path.bead(i), path.bead(j)),
                    j - i,
                    cfg.dt,
                );
        }
        total += wi * row;
    }
    Ok(2.0 * total)
}

/// Log-density of the discrete target: kinetic + reference - action.
pub fn target_log_density(
    path: &DiscretizedPath,
    gs: &RadialGroundState,
    table: &KernelTable,
    cfg: &PathConfig,
) -> Result<f64> {
    Ok(
        kinetic_log_weight(path, cfg) + reference_log_weight(path, gs, cfg)?
            - interaction_action(path, table, cfg)?,
    )
}

/// Incremental change `(Δ log-density, Δ action)` when beads
/// `start..start + new.len()/d` are replaced by `new`, computed the way the
/// sampler does; `None` if a new bead leaves the ground-state domain.
pub fn block_update_delta(
    path: &DiscretizedPath,
    start: usize,
    new: &[f64],
    cfg: &PathConfig,
    gs: &RadialGroundState,
    table: &KernelTable,
) -> Result<Option<(f64, f64)>> {
    check_dims(path, cfg)?;
    if !new.len().is_multiple_of(cfg.d) || start + new.len() / cfg.d > cfg.n_beads() {
        return Err(Error::invalid("new", "block does not fit the path"));
    }
    let target = Target::new(*cfg, gs, table)?;
    Ok(target
        .delta(path, start, new, true)
        .map(|d| (d.kinetic + d.reference - d.action, d.action)))
}

/// Incremental evaluation of the target under block updates.
pub(crate) struct Target<'a> {
    pub cfg: PathConfig,
    pub gs: &'a RadialGroundState,
    pub table: &'a KernelTable,
    slices: Vec<Option<TimeSlice>>,
    coupled: bool,
}

/// Change of each log-density component under a proposed update.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Delta {
    pub kinetic: f64,
    pub reference: f64,
    pub action: f64,
}

impl<'a> Target<'a> {
    pub fn new(cfg: PathConfig, gs: &'a RadialGroundState, table: &'a KernelTable) -> Result<Self> {
        if gs.d() != cfg.d || table.params().d != cfg.d {
            return Err(Error::invalid(
                "d",
                format!(
                    "dimension mismatch: path {}, ground state {}, kernel table {}",
                    cfg.d,
                    gs.d(),
                    table.params().d
                ),
            ));
        }
        Ok(Target {
            cfg,
            gs,
            table,
            slices: lag_slices(table, &cfg),
            coupled: table.params().e != 0.0,
        })
    }

    fn w(&self, r: f64, lag: usize) -> f64 {
        w_lag(self.table, &self.slices, r, lag, self.cfg.dt)
    }

    /// `(kinetic + reference, action)` from scratch.
    pub fn evaluate(&self, path: &DiscretizedPath) -> Result<(f64, f64)> {
        let reference =
            kinetic_log_weight(path, &self.cfg) + reference_log_weight(path, self.gs, &self.cfg)?;
        let action = if self.coupled {
            interaction_action(path, self.table, &self.cfg)?
        } else {
            0.0
        };
        Ok((reference, action))
    }

    /// Change when beads `start..start + new.len()/d` are replaced by `new`;
    /// `None` when a new bead leaves the ground-state domain.
    pub fn delta(
        &self,
        path: &DiscretizedPath,
        start: usize,
        new: &[f64],
        with_kinetic: bool,
    ) -> Option<Delta> {
        let d = self.cfg.d;
        let len = new.len() / d;
        let end = start + len;
        let n = self.cfg.n_beads();
        let new_bead = |i: usize| &new[(i - start) * d..(i - start + 1) * d];
        let mut out = Delta::default();
        let pot = self.gs.potential();
        for i in start..end {
            let r_new = norm(new_bead(i));
            if r_new > self.gs.r_max() {
                return None;
            }
            let r_old = path.radius(i);
            out.reference -= self.cfg.weight(i) * (pot.eval(r_new) - pot.eval(r_old));
            if i == 0 || i + 1 == n {
                out.reference += self.gs.ln_psi(r_new).ok()? - self.gs.ln_psi(r_old).ok()?;
            }
        }
        if with_kinetic {
            let dt2 = 2.0 * self.cfg.dt;
            let get = |i: usize| {
                if i >= start && i < end {
                    new_bead(i)
                } else {
                    path.bead(i)
                }
            };
            let lo = start.saturating_sub(1);
            let hi = (end + 1).min(n);
            for i in lo..hi - 1 {
                let old = dist(path.bead(i), path.bead(i + 1));
                let nw = dist(get(i), get(i + 1));
                out.kinetic -= (nw * nw - old * old) / dt2;
            }
        }
        if self.coupled {
            let mut da = 0.0;
            for i in start..end {
                let wi = self.cfg.weight(i);
                let qi_new = new_bead(i);
                let qi_old = path.bead(i);
                let mut row = 0.0;
                for j in 0..n {
                    if j >= start && j < end {
                        continue;
                    }
                    let lag = i.abs_diff(j);
                    let qj = path.bead(j);
                    row += self.cfg.weight(j)
                        * (self.w(dist(qi_new, qj), lag) - self.w(dist(qi_old, qj), lag));
                }
                da += 2.0 * wi * row;
                let mut inner = 0.0;
                for j in i + 1..end {
                    let lag = j - i;
                    inner += self.cfg.weight(j)
                        * (self.w(dist(qi_new, new_bead(j)), lag)
                            - self.w(dist(qi_old, path.bead(j)), lag));
                }
                da += 2.0 * wi * inner;
            }
            out.action = da;
        }
        Some(out)
    }
}
