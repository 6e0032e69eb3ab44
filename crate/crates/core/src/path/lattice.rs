//! A three-bead path restricted to a five-point lattice along one axis.
//!
//! The state space has 125 points, so the target law can be enumerated
//! exactly and compared with a Metropolis chain that uses the same
//! incremental log-density code as the continuous sampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{target_log_density, DiscretizedPath, PathConfig, Target};
use crate::error::{Error, Result};
use crate::kernels::KernelTable;
use crate::schrodinger::RadialGroundState;

pub const POINTS: usize = 5;
pub const BEADS: usize = 3;
pub const STATES: usize = 125;

/// Visit counts and observed transitions of a lattice chain.
#[derive(Debug, Clone)]
pub struct LatticeRun {
    pub visits: Vec<u64>,
    /// `transitions[a * STATES + b]` counts moves `a -> b` with `a != b`.
    pub transitions: Vec<u64>,
    pub steps: u64,
}

impl LatticeRun {
    pub fn frequencies(&self) -> Vec<f64> {
        let total = self.visits.iter().sum::<u64>() as f64;
        self.visits.iter().map(|&v| v as f64 / total).collect()
    }
}

pub struct LatticeToy<'a> {
    target: Target<'a>,
    spacing: f64,
}

fn decode(s: usize) -> [usize; BEADS] {
    [s / 25, (s / 5) % 5, s % 5]
}

fn encode(x: [usize; BEADS]) -> usize {
    x[0] * 25 + x[1] * 5 + x[2]
}

impl<'a> LatticeToy<'a> {
    /// Beads at `-dt, 0, dt`, each on `{-2, ..., 2} × spacing` along the first axis.
    pub fn new(
        gs: &'a RadialGroundState,
        table: &'a KernelTable,
        dt: f64,
        spacing: f64,
    ) -> Result<Self> {
        let cfg = PathConfig::new(dt, dt, gs.d())?;
        if 2.0 * spacing > gs.r_max() {
            return Err(Error::invalid(
                "spacing",
                "lattice extends beyond the ground-state domain",
            ));
        }
        Ok(LatticeToy {
            target: Target::new(cfg, gs, table)?,
            spacing,
        })
    }

    pub fn config(&self) -> &PathConfig {
        &self.target.cfg
    }

    fn coord(&self, x: usize) -> f64 {
        (x as f64 - 2.0) * self.spacing
    }

    pub fn state_path(&self, s: usize) -> DiscretizedPath {
        let x = decode(s);
        let d = self.target.cfg.d;
        DiscretizedPath::from_fn(BEADS, d, |i| {
            let mut q = vec![0.0; d];
            q[0] = self.coord(x[i]);
            q
        })
    }

    /// Exact target probabilities of all 125 states.
    pub fn enumerate(&self) -> Result<Vec<f64>> {
        let logs: Vec<f64> = (0..STATES)
            .map(|s| {
                target_log_density(
                    &self.state_path(s),
                    self.target.gs,
                    self.target.table,
                    &self.target.cfg,
                )
            })
            .collect::<Result<_>>()?;
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = w.iter().sum();
        Ok(w.into_iter().map(|x| x / z).collect())
    }

    /// Metropolis chain with single-site, pair-shift and end-resample moves.
    pub fn run(&self, steps: u64, seed: u64) -> LatticeRun {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = [2usize; BEADS];
        let mut path = self.state_path(encode(x));
        let d = self.target.cfg.d;
        let mut visits = vec![0u64; STATES];
        let mut transitions = vec![0u64; STATES * STATES];
        for _ in 0..steps {
            let before = encode(x);
            let (start, proposal): (usize, Vec<usize>) = match rng.random_range(0..3) {
                0 => {
                    let i = rng.random_range(0..BEADS);
                    let up = rng.random_bool(0.5);
                    (i, vec![if up { x[i] + 1 } else { x[i].wrapping_sub(1) }])
                }
                1 => {
                    let i = rng.random_range(0..BEADS - 1);
                    let up = rng.random_bool(0.5);
                    let shift = |v: usize| if up { v + 1 } else { v.wrapping_sub(1) };
                    (i, vec![shift(x[i]), shift(x[i + 1])])
                }
                _ => {
                    let i = if rng.random_bool(0.5) { 0 } else { BEADS - 1 };
                    (i, vec![rng.random_range(0..POINTS)])
                }
            };
            let u: f64 = rng.random();
            if proposal.iter().all(|&v| v < POINTS) {
                let mut new = vec![0.0; proposal.len() * d];
                for (k, &v) in proposal.iter().enumerate() {
                    new[k * d] = self.coord(v);
                }
                if let Some(delta) = self.target.delta(&path, start, &new, true) {
                    let log_ratio = delta.kinetic + delta.reference - delta.action;
                    if log_ratio >= 0.0 || u.ln() < log_ratio {
                        for (k, &v) in proposal.iter().enumerate() {
                            x[start + k] = v;
                            path.bead_mut(start + k)[0] = self.coord(v);
                        }
                    }
                }
            }
            let after = encode(x);
            visits[after] += 1;
            if after != before {
                transitions[before * STATES + after] += 1;
            }
        }
        LatticeRun {
            visits,
            transitions,
            steps,
        }
    }
}

/// Total variation distance `½ Σ |p - q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Largest standardized flux imbalance `|N(a→b) - N(b→a)| / sqrt(N(a→b) + N(b→a))`
/// over state pairs with at least `min_count` observed transitions, and the
/// fraction of those pairs exceeding `z`.
pub fn detailed_balance_check(run: &LatticeRun, min_count: u64, z: f64) -> (f64, f64, usize) {
    let mut worst = 0.0f64;
    let mut over = 0usize;
    let mut pairs = 0usize;
    for a in 0..STATES {
        for b in a + 1..STATES {
            let nab = run.transitions[a * STATES + b];
            let nba = run.transitions[b * STATES + a];
            if nab + nba < min_count {
                continue;
            }
            pairs += 1;
            let score = (nab as f64 - nba as f64).abs() / ((nab + nba) as f64).sqrt();
            worst = worst.max(score);
            if score > z {
                over += 1;
            }
        }
    }
    let frac = if pairs == 0 {
        0.0
    } else {
        over as f64 / pairs as f64
    };
    (worst, frac, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_round_trip() {
        for s in 0..STATES {
            assert_eq!(encode(decode(s)), s);
        }
    }
}
