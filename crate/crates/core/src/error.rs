use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("quadrature did not converge: value {value:.6e}, estimated error {residual:.3e} after {intervals} intervals")]
    Quadrature {
        value: f64,
        residual: f64,
        intervals: usize,
    },

    #[error("unsupported dimension d = {0} (supported: {1})")]
    UnsupportedDimension(usize, &'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("kernel table too coarse: max interpolation error {max_error:.3e} at (r = {r:.4}, t = {t:.4}) exceeds tolerance {tol:.1e}")]
    TableResolution {
        max_error: f64,
        r: f64,
        t: f64,
        tol: f64,
    },

    #[error("eigen solver failed: {0}")]
    Solver(String),

    #[error(
        "covariance matrix is not positive semidefinite: smallest eigenvalue {min_eigenvalue:.3e}"
    )]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("non-finite observable `{name}` at step {step}")]
    NonFinite { name: String, step: u64 },

    #[error(
        "cached `{name}` drifted at sweep {step}: cached {cached:.12e}, recomputed {fresh:.12e}"
    )]
    CacheDrift {
        name: &'static str,
        cached: f64,
        fresh: f64,
        step: u64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("configuration invalid:\n{}", .0.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<ConfigViolation>),

    #[error("unknown experiment `{name}`; valid experiments: {}", .valid.join(", "))]
    UnknownExperiment {
        name: String,
        valid: Vec<&'static str>,
    },

    #[error("bad file format in {path:?}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("config hash mismatch: expected {expected}, found {found} in {path:?}")]
    HashMismatch {
        expected: String,
        found: String,
        path: PathBuf,
    },

    #[error("run stopped early; checkpoints in {0:?} resume it")]
    Interrupted(PathBuf),

    #[error("I/O error at {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A single problem found while validating a run configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigViolation {
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
