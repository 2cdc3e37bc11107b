//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Hypothesis *verdicts* (a condition that
//! was checked and found false) are not errors — they are data in the reports; errors are
//! reserved for inputs the operations cannot meaningfully process.

use num_complex::Complex64;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The point sits on a partition endpoint or outside every branch domain.
    #[error("point x = {x} is outside every branch domain (partition endpoints excluded)")]
    OutsideDomain { x: f64 },

    /// The value is not in the (open) image of the requested branch.
    #[error("y = {y} is outside the image of branch {branch}")]
    OutsideImage { y: f64, branch: usize },

    /// A branch derivative vanishes (or could not be bounded away from zero).
    #[error("branch {branch} is not expanding: |f'| vanishes on its domain")]
    NonExpandingBranch { branch: usize },

    /// Bad argument combination (domain-level validation).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The grid cannot resolve the requested scale.
    #[error("grid too coarse: {0}")]
    Resolution(String),

    /// An iteration failed to reach its tolerance within the allowed steps.
    #[error("no convergence after {iters} iterations (residual {residual:.3e})")]
    NoConvergence { iters: usize, residual: f64 },

    /// A certified tail series diverges for the requested exponent.
    #[error("divergent tails: {0}")]
    DivergentTails(String),

    /// A flow orbit landed exactly on a partition endpoint.
    #[error("orbit hit a partition endpoint at x = {x}")]
    OrbitSingular { x: f64 },

    /// A flow evaluation exceeded the return budget.
    #[error("flow exceeded the budget of {budget} returns")]
    BudgetExceeded { budget: usize },

    /// The resolvent series was requested at a point where it does not converge.
    #[error("spectral radius {radius:.6} at z = {zre}{zim:+}i is not below 1: inside the pole region", zre = .z.re, zim = .z.im)]
    InsidePoleRegion { z: Complex64, radius: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
