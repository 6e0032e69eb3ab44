//! Path-integral Monte Carlo for the massless Nelson model: a quantum particle
//! in a confining potential coupled to a massless scalar field, with the
//! field integrated out into a retarded pair interaction along the path.
//!
//! The crate exposes the analytic kernels, a radial Schrödinger solver for the
//! free particle, MCMC on discretized paths, the conditional Gaussian field
//! given a path, and the numerical diagnostics built on top of them.

// `!(x > 0.0)` rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod field;
pub mod kernels;
pub mod path;
pub mod quadrature;
pub mod schrodinger;
pub mod special;
pub mod stats;

pub use error::{ConfigViolation, Error, Result};
