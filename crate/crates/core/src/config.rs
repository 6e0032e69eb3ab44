//! Run configuration in a plain `key = value` text format.
//!
//! One entry per line; `#` starts a comment; lists are comma separated.
//! Unknown keys, unparsable values and violated invariants are all reported
//! together, each naming its key. Missing keys take their defaults.
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `d` | spatial dimension (3, 4, 5) | 3 |
//! | `e` | coupling | 0.3 |
//! | `sigma` | charge width | 1 |
//! | `pot_C`, `pot_alpha` | potential `C |q|^{2α}` | 1, 2 |
//! | `T`, `dt` | half-window and time step | 8, 0.05 |
//! | `T_list` | curve abscissae | 4, 8, 16, 32 |
//! | `test_Tstar`, `test_zeta`, `test_kstar` | singularity test function | exp(2), 0.5, 1/(2σ) |
//! | `test_ref_charge` | reference charge of `ŝ`, or `auto` | auto |
//! | `steps`, `burn_in`, `thin`, `chains`, `seed`, `resync_interval` | sampler | 5000, 500, 5, 4, 1, 100 |
//! | `checkpoint_every` | sweeps between checkpoints, 0 = never | 0 |
//! | `table_resolution` | kernel table spacing | 0.02 |
//! | `output_dir` | artifact directory | `out` |
//! | `lags` | correlation lags | 0.5, 1, 2, 4, 8 |
//! | `spectral_t` | times for the spectral fit | 11 roughly log-spaced points from 10 to 100 |
//! | `gamma_list` | correlation exponents for the convolution term | 0.5, 1 |
//! | `bins` | radial bins for localization | 10 |
//! | `accept_decay_factor`, `accept_z`, `accept_spectral_tol`, `accept_convolution_tol` | acceptance thresholds | 0.5, 4, 0.05, 0.1 |

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ConfigViolation, Error, Result};
use crate::kernels::{IrTestFunction, ModelParams, DEFAULT_TABLE_RESOLUTION};
use crate::path::{McmcConfig, PathConfig};

/// Thresholds of the acceptance checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    /// Required `value(T_max) / value(T_min)` upper bound for the divergence curve.
    pub decay_factor: f64,
    /// Standard-error multiple for every statistical comparison.
    pub z: f64,
    pub spectral_tol: f64,
    pub convolution_tol: f64,
}

impl Default for Acceptance {
    fn default() -> Self {
        Acceptance {
            decay_factor: 0.5,
            z: 4.0,
            spectral_tol: 0.05,
            convolution_tol: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub params: ModelParams,
    pub path: PathConfig,
    pub t_list: Vec<f64>,
    pub test: IrTestFunction,
    /// `true` when the test function's reference charge follows `e`.
    pub auto_ref_charge: bool,
    pub mcmc: McmcConfig,
    pub checkpoint_every: u64,
    pub table_resolution: f64,
    pub output_dir: PathBuf,
    pub lags: Vec<f64>,
    pub spectral_t: Vec<f64>,
    pub gamma_list: Vec<f64>,
    pub bins: usize,
    pub acceptance: Acceptance,
}

impl Default for RunConfig {
    fn default() -> Self {
        let params = ModelParams::default();
        RunConfig {
            params,
            path: PathConfig {
                t_half: 8.0,
                dt: 0.05,
                d: params.d,
            },
            t_list: vec![4.0, 8.0, 16.0, 32.0],
            test: IrTestFunction::default_for(&params),
            auto_ref_charge: true,
            mcmc: McmcConfig::default(),
            checkpoint_every: 0,
            table_resolution: DEFAULT_TABLE_RESOLUTION,
            output_dir: PathBuf::from("out"),
            lags: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            spectral_t: vec![
                10.0, 12.5, 16.0, 20.0, 25.0, 32.0, 40.0, 50.0, 63.0, 80.0, 100.0,
            ],
            gamma_list: vec![0.5, 1.0],
            bins: 10,
            acceptance: Acceptance::default(),
        }
    }
}

const KEYS: &[&str] = &[
    "d",
    "e",
    "sigma",
    "pot_C",
    "pot_alpha",
    "T",
    "dt",
    "T_list",
    "test_Tstar",
    "test_zeta",
    "test_kstar",
    "test_ref_charge",
    "steps",
    "burn_in",
    "thin",
    "chains",
    "seed",
    "resync_interval",
    "checkpoint_every",
    "table_resolution",
    "output_dir",
    "lags",
    "spectral_t",
    "gamma_list",
    "bins",
    "accept_decay_factor",
    "accept_z",
    "accept_spectral_tol",
    "accept_convolution_tol",
];

fn violation(key: &str, message: impl Into<String>) -> ConfigViolation {
    ConfigViolation {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Parsed `key = value` pairs with per-key typed accessors that record failures.
struct Entries {
    map: BTreeMap<String, String>,
    errors: Vec<ConfigViolation>,
}

impl Entries {
    fn get<T: std::str::FromStr>(&mut self, key: &str, kind: &str) -> Option<T> {
        let raw = self.map.get(key)?;
        match raw.parse::<T>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.errors
                    .push(violation(key, format!("expected {kind}, got `{raw}`")));
                None
            }
        }
    }

    fn float(&mut self, key: &str, slot: &mut f64) {
        if let Some(v) = self.get::<f64>(key, "a number") {
            *slot = v;
        }
    }

    fn int<T: std::str::FromStr>(&mut self, key: &str, slot: &mut T) {
        if let Some(v) = self.get::<T>(key, "a nonnegative integer") {
            *slot = v;
        }
    }

    fn list(&mut self, key: &str, slot: &mut Vec<f64>) {
        let Some(raw) = self.map.get(key) else { return };
        let parsed: std::result::Result<Vec<f64>, _> = raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect();
        match parsed {
            Ok(v) => *slot = v,
            Err(_) => self.errors.push(violation(
                key,
                format!("expected a comma-separated list of numbers, got `{raw}`"),
            )),
        }
    }
}

fn check_increasing(key: &str, xs: &[f64], out: &mut Vec<ConfigViolation>) {
    if xs.is_empty()
        || xs.iter().any(|x| !(*x > 0.0 && x.is_finite()))
        || xs.windows(2).any(|w| w[1] <= w[0])
    {
        out.push(violation(
            key,
            "must be a nonempty, strictly increasing list of positive numbers",
        ));
    }
}

impl RunConfig {
    /// Every invariant violation, each naming its key.
    pub fn violations(&self) -> Vec<ConfigViolation> {
        let mut out = self.params.violations();
        out.extend(self.path.violations());
        if self.path.d != self.params.d {
            out.push(violation(
                "d",
                "path dimension differs from model dimension",
            ));
        }
        out.extend(self.test.violations(&self.params));
        check_increasing("T_list", &self.t_list, &mut out);
        for &t in &self.t_list {
            let v = PathConfig {
                t_half: t,
                ..self.path
            }
            .violations();
            if !v.is_empty() {
                out.push(violation(
                    "T_list",
                    format!("T = {t} is not a multiple of dt = {}", self.path.dt),
                ));
            }
        }
        check_increasing("lags", &self.lags, &mut out);
        check_increasing("spectral_t", &self.spectral_t, &mut out);
        check_increasing("gamma_list", &self.gamma_list, &mut out);
        let m = &self.mcmc;
        if m.steps == 0 {
            out.push(violation("steps", "must be positive"));
        }
        if m.thin == 0 {
            out.push(violation("thin", "must be positive"));
        } else if m.steps / m.thin < 2 {
            out.push(violation("thin", "steps / thin must be at least 2"));
        }
        if m.chains == 0 {
            out.push(violation("chains", "must be positive"));
        }
        if m.resync_interval == 0 {
            out.push(violation("resync_interval", "must be positive"));
        }
        if !(self.table_resolution > 0.0 && self.table_resolution <= 0.5) {
            out.push(violation("table_resolution", "must lie in (0, 0.5]"));
        }
        if self.bins < 2 {
            out.push(violation("bins", "need at least 2 bins"));
        }
        let a = &self.acceptance;
        for (key, v) in [
            ("accept_decay_factor", a.decay_factor),
            ("accept_z", a.z),
            ("accept_spectral_tol", a.spectral_tol),
            ("accept_convolution_tol", a.convolution_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(violation(key, format!("must be positive, got {v}")));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Parses and validates configuration text, reporting every problem at once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Entries {
            map: BTreeMap::new(),
            errors: Vec::new(),
        };
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                entries.errors.push(violation(
                    &format!("line {}", n + 1),
                    format!("expected `key = value`, got `{line}`"),
                ));
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                entries.errors.push(violation(k, "unknown key"));
                continue;
            }
            if entries.map.insert(k.to_string(), v.to_string()).is_some() {
                entries.errors.push(violation(k, "given more than once"));
            }
        }
        let mut c = RunConfig::default();
        let e = &mut entries;
        e.int("d", &mut c.params.d);
        e.float("e", &mut c.params.e);
        e.float("sigma", &mut c.params.sigma);
        e.float("pot_C", &mut c.params.pot_c);
        e.float("pot_alpha", &mut c.params.pot_alpha);
        e.float("T", &mut c.path.t_half);
        e.float("dt", &mut c.path.dt);
        c.path.d = c.params.d;
        e.list("T_list", &mut c.t_list);
        c.test = IrTestFunction::default_for(&c.params);
        e.float("test_Tstar", &mut c.test.t_star);
        e.float("test_zeta", &mut c.test.zeta);
        e.float("test_kstar", &mut c.test.k_star);
        match e.map.get("test_ref_charge").map(String::as_str) {
            None | Some("auto") => {}
            Some(_) => {
                c.auto_ref_charge = false;
                e.float("test_ref_charge", &mut c.test.ref_charge);
            }
        }
        e.int("steps", &mut c.mcmc.steps);
        e.int("burn_in", &mut c.mcmc.burn_in);
        e.int("thin", &mut c.mcmc.thin);
        e.int("chains", &mut c.mcmc.chains);
        e.int("seed", &mut c.mcmc.seed);
        e.int("resync_interval", &mut c.mcmc.resync_interval);
        e.int("checkpoint_every", &mut c.checkpoint_every);
        e.float("table_resolution", &mut c.table_resolution);
        if let Some(dir) = e.map.get("output_dir") {
            c.output_dir = PathBuf::from(dir);
        }
        e.list("lags", &mut c.lags);
        e.list("spectral_t", &mut c.spectral_t);
        e.list("gamma_list", &mut c.gamma_list);
        e.int("bins", &mut c.bins);
        e.float("accept_decay_factor", &mut c.acceptance.decay_factor);
        e.float("accept_z", &mut c.acceptance.z);
        e.float("accept_spectral_tol", &mut c.acceptance.spectral_tol);
        e.float("accept_convolution_tol", &mut c.acceptance.convolution_tol);
        let mut errors = entries.errors;
        // invariants are only meaningful for keys that parsed
        let bad: Vec<String> = errors.iter().map(|v| v.key.clone()).collect();
        errors.extend(c.violations().into_iter().filter(|v| !bad.contains(&v.key)));
        if errors.is_empty() {
            Ok(c)
        } else {
            Err(Error::Config(errors))
        }
    }

    /// Canonical text: every key, fixed order, shortest round-trip floats.
    pub fn serialize(&self) -> String {
        let list = |xs: &[f64]| {
            xs.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let ref_charge = if self.auto_ref_charge {
            "auto".to_string()
        } else {
            format!("{:?}", self.test.ref_charge)
        };
        let p = &self.params;
        let m = &self.mcmc;
        let a = &self.acceptance;
        let rows: Vec<(&str, String)> = vec![
            ("d", p.d.to_string()),
            ("e", format!("{:?}", p.e)),
            ("sigma", format!("{:?}", p.sigma)),
            ("pot_C", format!("{:?}", p.pot_c)),
            ("pot_alpha", format!("{:?}", p.pot_alpha)),
            ("T", format!("{:?}", self.path.t_half)),
            ("dt", format!("{:?}", self.path.dt)),
            ("T_list", list(&self.t_list)),
            ("test_Tstar", format!("{:?}", self.test.t_star)),
            ("test_zeta", format!("{:?}", self.test.zeta)),
            ("test_kstar", format!("{:?}", self.test.k_star)),
            ("test_ref_charge", ref_charge),
            ("steps", m.steps.to_string()),
            ("burn_in", m.burn_in.to_string()),
            ("thin", m.thin.to_string()),
            ("chains", m.chains.to_string()),
            ("seed", m.seed.to_string()),
            ("resync_interval", m.resync_interval.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("table_resolution", format!("{:?}", self.table_resolution)),
            ("output_dir", self.output_dir.display().to_string()),
            ("lags", list(&self.lags)),
            ("spectral_t", list(&self.spectral_t)),
            ("gamma_list", list(&self.gamma_list)),
            ("bins", self.bins.to_string()),
            ("accept_decay_factor", format!("{:?}", a.decay_factor)),
            ("accept_z", format!("{:?}", a.z)),
            ("accept_spectral_tol", format!("{:?}", a.spectral_tol)),
            ("accept_convolution_tol", format!("{:?}", a.convolution_tol)),
        ];
        rows.into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// First 8 bytes of the SHA-256 of the canonical text, excluding
    /// `output_dir` (moving a run does not change its identity).
    pub fn hash(&self) -> u64 {
        let canonical: String = self
            .serialize()
            .lines()
            .filter(|l| !l.starts_with("output_dir"))
            .map(|l| format!("{l}\n"))
            .collect();
        let digest = Sha256::digest(canonical.as_bytes());
        u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }
}
