//! Spectral analysis of suspension semiflows over piecewise-expanding interval maps:
//! transfer operators, variation-type norms, expansion certificates, correlation
//! functions, and resonance scans.

// Guards written as `!(x > 0.0 && x.is_finite())` are deliberate: the negated form
// rejects NaN, which a refactor to `x <= 0.0` would silently accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod gbv;
pub mod hypothesis;
pub mod linalg;
pub mod maps;
pub mod quad;
pub mod resonances;
pub mod suspension;
pub mod tasks;
pub mod transfer;

pub use error::{Error, Result};
