//! Metropolis–Hastings sampling of `N_T` on discretized paths.
//!
//! Moves: single-bead Gaussian displacements, Brownian-bridge resampling of
//! interior blocks, and free Brownian resampling of end blocks. The bridge and
//! end-block proposals sample the kinetic term exactly, so only the reference
//! and interaction changes enter their acceptance ratio. Step size and block
//! lengths are tuned during burn-in and frozen afterwards.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{self, Checkpoint};
use super::{DiscretizedPath, PathConfig, Target};
use crate::error::{Error, Result};
use crate::kernels::KernelTable;
use crate::schrodinger::RadialGroundState;
use crate::stats::Estimate;

/// Sampler settings. Counts are in sweeps; one sweep proposes `n_beads`
/// single-bead moves, about `n_beads / L` bridge moves, and two end moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub burn_in: u64,
    pub steps: u64,
    /// Record observables every `thin` sweeps after burn-in.
    pub thin: u64,
    pub chains: usize,
    pub seed: u64,
    /// Recompute cached log-densities from scratch every this many sweeps.
    pub resync_interval: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            burn_in: 500,
            steps: 5000,
            thin: 5,
            chains: 4,
            seed: 1,
            resync_interval: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveKind {
    Single = 0,
    Bridge = 1,
    Endpoint = 2,
}

/// Proposal and acceptance counts per move kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveTally {
    pub proposed: [u64; 3],
    pub accepted: [u64; 3],
}

impl MoveTally {
    pub fn rate(&self, kind: MoveKind) -> f64 {
        let k = kind as usize;
        if self.proposed[k] == 0 {
            0.0
        } else {
            self.accepted[k] as f64 / self.proposed[k] as f64
        }
    }

    fn add(&mut self, kind: MoveKind, accepted: bool) {
        self.proposed[kind as usize] += 1;
        self.accepted[kind as usize] += accepted as u64;
    }
}

/// Adaptive proposal scales; adjusted toward 30–60% acceptance while not frozen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tuner {
    pub step: f64,
    pub block_len: usize,
    pub end_len: usize,
    pub frozen: bool,
    pub window: MoveTally,
}

const TUNE_LO: f64 = 0.3;
const TUNE_HI: f64 = 0.6;
const TUNE_EVERY: u64 = 20;

impl Tuner {
    fn new(cfg: &PathConfig) -> Self {
        let n = cfg.n_beads();
        Tuner {
            step: cfg.dt.sqrt(),
            block_len: ((1.0 / cfg.dt).round() as usize).clamp(1, n.saturating_sub(2).max(1)),
            end_len: ((0.5 / cfg.dt).round() as usize).clamp(1, n - 1),
            frozen: false,
            window: MoveTally::default(),
        }
    }

    fn adapt(&mut self, n_beads: usize) {
        let w = self.window;
        if w.proposed[0] > 0 {
            let a = w.rate(MoveKind::Single);
            if a > TUNE_HI {
                self.step *= 1.25;
            } else if a < TUNE_LO {
                self.step /= 1.25;
            }
        }
        let max_block = n_beads.saturating_sub(2).max(1);
        let resize = |len: usize, rate: f64, max: usize| -> usize {
            if rate > TUNE_HI {
                (len + (len / 4).max(1)).min(max)
            } else if rate < TUNE_LO {
                (len * 3 / 4).max(1)
            } else {
                len
            }
        };
        if w.proposed[1] > 0 {
            self.block_len = resize(self.block_len, w.rate(MoveKind::Bridge), max_block);
        }
        if w.proposed[2] > 0 {
            self.end_len = resize(self.end_len, w.rate(MoveKind::Endpoint), n_beads - 1);
        }
        self.window = MoveTally::default();
    }
}

/// Path functionals recorded along a chain.
pub trait Observable: Sync {
    fn names(&self) -> Vec<String>;
    /// Appends one value per name.
    fn eval(&self, path: &DiscretizedPath, cfg: &PathConfig, out: &mut Vec<f64>) -> Result<()>;
}

/// Shared immutable inputs of a set of chains.
#[derive(Clone, Copy)]
pub struct ChainSetup<'a> {
    pub cfg: PathConfig,
    pub mcmc: McmcConfig,
    pub gs: &'a RadialGroundState,
    pub table: &'a KernelTable,
    /// Hash of the full run configuration, stored in checkpoints.
    pub config_hash: u64,
}

/// Where and how often to checkpoint. `stop_after` ends the run early (after
/// writing a checkpoint) once the given sweep count is reached.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointSpec {
    pub dir: PathBuf,
    pub every: u64,
    pub stop_after: Option<u64>,
}

impl CheckpointSpec {
    pub fn file(&self, chain_id: u64) -> PathBuf {
        self.dir.join(format!("chain{chain_id:03}.ckpt"))
    }
}

/// One Markov chain with cached log-density components.
pub struct Chain<'a> {
    target: Target<'a>,
    mcmc: McmcConfig,
    path: DiscretizedPath,
    log_ref: f64,
    action: f64,
    rng: ChaCha8Rng,
    tuner: Tuner,
    tally: MoveTally,
    sweep: u64,
    chain_id: u64,
    names: Vec<String>,
    series: Vec<Vec<f64>>,
    buf: Vec<f64>,
}

/// Result of a chain: recorded series plus final sampler state.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub chain_id: u64,
    pub names: Vec<String>,
    pub series: Vec<Vec<f64>>,
    pub tally: MoveTally,
    pub tuner: Tuner,
    pub sweeps: u64,
    pub completed: bool,
    pub final_path: DiscretizedPath,
}

impl ChainOutput {
    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.series[i].as_slice())
    }

    pub fn estimates(&self) -> Result<Vec<(String, Estimate)>> {
        self.names
            .iter()
            .zip(&self.series)
            .map(|(n, s)| Ok((n.clone(), Estimate::from_series(s)?)))
            .collect()
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

impl<'a> Chain<'a> {
    pub fn new(setup: &ChainSetup<'a>, names: Vec<String>, chain_id: u64) -> Result<Self> {
        let target = Target::new(setup.cfg, setup.gs, setup.table)?;
        let path = DiscretizedPath::zeros(setup.cfg.n_beads(), setup.cfg.d);
        let (log_ref, action) = target.evaluate(&path)?;
        let mut rng = ChaCha8Rng::seed_from_u64(setup.mcmc.seed);
        rng.set_stream(chain_id);
        let n_obs = names.len();
        Ok(Chain {
            target,
            mcmc: setup.mcmc,
            path,
            log_ref,
            action,
            rng,
            tuner: Tuner::new(&setup.cfg),
            tally: MoveTally::default(),
            sweep: 0,
            chain_id,
            names,
            series: vec![Vec::new(); n_obs],
            buf: Vec::new(),
        })
    }

    pub fn path(&self) -> &DiscretizedPath {
        &self.path
    }

    pub fn sweeps(&self) -> u64 {
        self.sweep
    }

    pub fn tally(&self) -> &MoveTally {
        &self.tally
    }

    pub fn tuner(&self) -> &Tuner {
        &self.tuner
    }

    /// Cached `(kinetic + reference, action)`.
    pub fn cached(&self) -> (f64, f64) {
        (self.log_ref, self.action)
    }

    /// Replaces the current path (e.g. with a draw from the reference measure).
    pub fn set_path(&mut self, path: DiscretizedPath) -> Result<()> {
        let (r, a) = self.target.evaluate(&path)?;
        self.path = path;
        self.log_ref = r;
        self.action = a;
        Ok(())
    }

    /// Metropolis–Hastings test. Proposals that sample the Brownian increments
    /// exactly (`kinetic_in_proposal`) leave the kinetic change out of the ratio.
    fn accept(
        &mut self,
        kind: MoveKind,
        start: usize,
        new: &[f64],
        kinetic_in_proposal: bool,
    ) -> bool {
        let ok = match self.target.delta(&self.path, start, new, true) {
            None => false,
            Some(delta) => {
                let kinetic = if kinetic_in_proposal {
                    0.0
                } else {
                    delta.kinetic
                };
                let log_ratio = kinetic + delta.reference - delta.action;
                let u: f64 = self.rng.random();
                if log_ratio >= 0.0 || u.ln() < log_ratio {
                    let d = self.path.d();
                    self.path.coords[start * d..start * d + new.len()].copy_from_slice(new);
                    self.log_ref += delta.kinetic + delta.reference;
                    self.action += delta.action;
                    true
                } else {
                    false
                }
            }
        };
        self.tally.add(kind, ok);
        if !self.tuner.frozen {
            self.tuner.window.add(kind, ok);
        }
        ok
    }

    fn single_move(&mut self) {
        let n = self.path.n_beads();
        let i = self.rng.random_range(0..n);
        let s = self.tuner.step;
        let new: Vec<f64> = self
            .path
            .bead(i)
            .to_vec()
            .iter()
            .map(|x| x + s * gaussian(&mut self.rng))
            .collect();
        self.accept(MoveKind::Single, i, &new, false);
    }

    fn bridge_move(&mut self) {
        let n = self.path.n_beads();
        let d = self.path.d();
        let len = self.tuner.block_len.min(n - 2);
        let start = self.rng.random_range(1..=n - 1 - len);
        let end = start + len; // exclusive; anchor at `end`
        let dt = self.target.cfg.dt;
        let right = self.path.bead(end).to_vec();
        let mut prev = self.path.bead(start - 1).to_vec();
        let mut new = Vec::with_capacity(len * d);
        for k in start..end {
            let remaining = (end - k + 1) as f64;
            let sd = (dt * (remaining - 1.0) / remaining).sqrt();
            let next: Vec<f64> = (0..d)
                .map(|c| prev[c] + (right[c] - prev[c]) / remaining + sd * gaussian(&mut self.rng))
                .collect();
            new.extend_from_slice(&next);
            prev = next;
        }
        self.accept(MoveKind::Bridge, start, &new, true);
    }

    fn endpoint_move(&mut self, left: bool) {
        let n = self.path.n_beads();
        let d = self.path.d();
        let len = self.tuner.end_len.min(n - 1);
        let sd = self.target.cfg.dt.sqrt();
        let mut new = vec![0.0; len * d];
        if left {
            let mut prev = self.path.bead(len).to_vec();
            for k in (0..len).rev() {
                for x in prev.iter_mut() {
                    *x += sd * gaussian(&mut self.rng);
                }
                new[k * d..(k + 1) * d].copy_from_slice(&prev);
            }
            self.accept(MoveKind::Endpoint, 0, &new, true);
        } else {
            let start = n - len;
            let mut prev = self.path.bead(start - 1).to_vec();
            for k in 0..len {
                for x in prev.iter_mut() {
                    *x += sd * gaussian(&mut self.rng);
                }
                new[k * d..(k + 1) * d].copy_from_slice(&prev);
            }
            self.accept(MoveKind::Endpoint, start, &new, true);
        }
    }

    /// One sweep of the move mix.
    pub fn sweep(&mut self) -> Result<()> {
        let n = self.path.n_beads();
        for _ in 0..n {
            self.single_move();
        }
        if n >= 3 {
            let blocks = n.div_ceil(self.tuner.block_len.min(n - 2));
            for _ in 0..blocks {
                self.bridge_move();
            }
        }
        self.endpoint_move(true);
        self.endpoint_move(false);
        self.sweep += 1;
        if !self.tuner.frozen {
            if self.sweep >= self.mcmc.burn_in {
                self.tuner.frozen = true;
                self.tuner.window = MoveTally::default();
            } else if self.sweep.is_multiple_of(TUNE_EVERY) {
                self.tuner.adapt(n);
            }
        }
        if self.mcmc.resync_interval > 0 && self.sweep.is_multiple_of(self.mcmc.resync_interval) {
            self.resync()?;
        }
        Ok(())
    }

    /// Recomputes the cached components and fails if they drifted by more than `1e-8` relative.
    pub fn resync(&mut self) -> Result<()> {
        let (r, a) = self.target.evaluate(&self.path)?;
        for (name, cached, fresh) in [("reference", self.log_ref, r), ("action", self.action, a)] {
            if (cached - fresh).abs() > 1e-8 * fresh.abs().max(1.0) {
                return Err(Error::CacheDrift {
                    name,
                    cached,
                    fresh,
                    step: self.sweep,
                });
            }
        }
        self.log_ref = r;
        self.action = a;
        Ok(())
    }

    fn record(&mut self, obs: &dyn Observable) -> Result<()> {
        self.buf.clear();
        obs.eval(&self.path, &self.target.cfg, &mut self.buf)?;
        if self.buf.len() != self.names.len() {
            return Err(Error::invalid(
                "observable",
                format!(
                    "returned {} values for {} names",
                    self.buf.len(),
                    self.names.len()
                ),
            ));
        }
        for (k, &v) in self.buf.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    name: self.names[k].clone(),
                    step: self.sweep,
                });
            }
            self.series[k].push(v);
        }
        Ok(())
    }

    /// Runs until `burn_in + steps` sweeps, recording every `thin` sweeps
    /// after burn-in and checkpointing if requested.
    pub fn run(
        &mut self,
        obs: &dyn Observable,
        ckpt: Option<&CheckpointSpec>,
        config_hash: u64,
    ) -> Result<bool> {
        let total = self.mcmc.burn_in + self.mcmc.steps;
        let thin = self.mcmc.thin.max(1);
        while self.sweep < total {
            self.sweep()?;
            if self.sweep > self.mcmc.burn_in
                && (self.sweep - self.mcmc.burn_in).is_multiple_of(thin)
            {
                self.record(obs)?;
            }
            if let Some(spec) = ckpt {
                let due = spec.every > 0 && self.sweep.is_multiple_of(spec.every);
                let stop = spec.stop_after.is_some_and(|s| self.sweep >= s);
                if due || stop || self.sweep == total {
                    self.checkpoint(config_hash)
                        .save(&spec.file(self.chain_id))?;
                }
                if stop && self.sweep < total {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    pub fn checkpoint(&self, config_hash: u64) -> Checkpoint {
        Checkpoint {
            config_hash,
            chain_id: self.chain_id,
            sweep: self.sweep,
            rng_seed: self.rng.get_seed(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos(),
            tuner: self.tuner,
            tally: self.tally,
            d: self.path.d(),
            coords: self.path.coords().to_vec(),
            log_ref: self.log_ref,
            action: self.action,
            names: self.names.clone(),
            series: self.series.clone(),
        }
    }

    /// Restores a chain from a checkpoint taken with the same configuration.
    pub fn restore(setup: &ChainSetup<'a>, ck: Checkpoint) -> Result<Self> {
        let target = Target::new(setup.cfg, setup.gs, setup.table)?;
        if ck.d != setup.cfg.d || ck.coords.len() != setup.cfg.n_beads() * setup.cfg.d {
            return Err(Error::invalid(
                "checkpoint",
                "path shape does not match the configuration",
            ));
        }
        let mut rng = ChaCha8Rng::from_seed(ck.rng_seed);
        rng.set_stream(ck.rng_stream);
        rng.set_word_pos(ck.rng_word_pos);
        Ok(Chain {
            target,
            mcmc: setup.mcmc,
            path: DiscretizedPath::from_coords(ck.d, ck.coords)?,
            log_ref: ck.log_ref,
            action: ck.action,
            rng,
            tuner: ck.tuner,
            tally: ck.tally,
            sweep: ck.sweep,
            chain_id: ck.chain_id,
            names: ck.names,
            series: ck.series,
            buf: Vec::new(),
        })
    }

    pub fn into_output(self) -> ChainOutput {
        let completed = self.sweep >= self.mcmc.burn_in + self.mcmc.steps;
        ChainOutput {
            chain_id: self.chain_id,
            names: self.names,
            series: self.series,
            tally: self.tally,
            tuner: self.tuner,
            sweeps: self.sweep,
            completed,
            final_path: self.path,
        }
    }
}

/// Runs (or resumes from its checkpoint) chain `chain_id`.
pub fn run_chain(
    setup: &ChainSetup<'_>,
    obs: &dyn Observable,
    chain_id: u64,
    ckpt: Option<&CheckpointSpec>,
) -> Result<ChainOutput> {
    let resume = ckpt.map(|c| c.file(chain_id)).filter(|p| p.exists());
    let mut chain = match resume {
        Some(p) => {
            let ck = checkpoint::load(&p)?;
            if ck.config_hash != setup.config_hash {
                return Err(Error::HashMismatch {
                    expected: format!("{:016x}", setup.config_hash),
                    found: format!("{:016x}", ck.config_hash),
                    path: p,
                });
            }
            if ck.chain_id != chain_id {
                return Err(Error::Format {
                    path: p,
                    reason: format!(
                        "checkpoint for chain {} found in slot {chain_id}",
                        ck.chain_id
                    ),
                });
            }
            Chain::restore(setup, ck)?
        }
        None => Chain::new(setup, obs.names(), chain_id)?,
    };
    chain.run(obs, ckpt, setup.config_hash)?;
    Ok(chain.into_output())
}

/// Runs `setup.mcmc.chains` independent chains in parallel; outputs are in chain order.
pub fn run_chains(
    setup: &ChainSetup<'_>,
    obs: &dyn Observable,
    ckpt: Option<&CheckpointSpec>,
) -> Result<Vec<ChainOutput>> {
    (0..setup.mcmc.chains as u64)
        .into_par_iter()
        .map(|id| run_chain(setup, obs, id, ckpt))
        .collect()
}

/// Per-observable estimates combined over chains (deterministic in chain order).
pub fn merge_estimates(outputs: &[ChainOutput]) -> Result<Vec<(String, Estimate)>> {
    let first = outputs
        .first()
        .ok_or_else(|| Error::InsufficientData("no chain outputs".into()))?;
    first
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let parts: Vec<Estimate> = outputs
                .iter()
                .map(|o| Estimate::from_series(&o.series[k]))
                .collect::<Result<_>>()?;
            Ok((name.clone(), Estimate::combine(&parts)?))
        })
        .collect()
}
