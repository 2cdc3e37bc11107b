//! JSON run configuration: the dynamical system (map family plus return time), the
//! task to execute, per-task parameters, and named built-in observables.
//!
//! A config file looks like
//!
//! ```json
//! {
//!   "system": {
//!     "map": { "family": "lorenz", "lambda": 1.0, "beta": 0.5, "i_max": 40 },
//!     "tau": { "kind": "lorenz_log", "lambda": 1.0 }
//!   },
//!   "task": "check",
//!   "params": { "sigma": 0.15, "gamma": 0.5 },
//!   "output_dir": "out",
//!   "seed": 7
//! }
//! ```
//!
//! Unknown fields are rejected so typos surface as diagnostics naming the field.

use crate::error::{Error, Result};
use crate::hypothesis::ReturnTime;
use crate::maps::{
    make_doubling, make_explicit, make_lorenz_map, make_lueroth, make_tent, AffineBranchSpec,
    Interval, PiecewiseMap,
};
use crate::suspension::Observable;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Map family selection, mirroring the library constructors.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MapSpec {
    Doubling,
    Tent,
    Lueroth {
        i_max: usize,
    },
    Lorenz {
        lambda: f64,
        beta: f64,
        i_max: usize,
    },
    Explicit {
        omega: [f64; 2],
        branches: Vec<ExplicitBranch>,
    },
}

/// One affine branch of an explicit map: domain endpoints and coefficients.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitBranch {
    pub lo: f64,
    pub hi: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl MapSpec {
    pub fn build(&self) -> Result<PiecewiseMap> {
        match self {
            MapSpec::Doubling => Ok(make_doubling()),
            MapSpec::Tent => Ok(make_tent()),
            MapSpec::Lueroth { i_max } => make_lueroth(*i_max),
            MapSpec::Lorenz {
                lambda,
                beta,
                i_max,
            } => make_lorenz_map(*lambda, *beta, *i_max),
            MapSpec::Explicit { omega, branches } => {
                let specs: Vec<AffineBranchSpec> = branches
                    .iter()
                    .map(|b| AffineBranchSpec {
                        domain: Interval {
                            lo: b.lo,
                            hi: b.hi,
                        },
                        slope: b.slope,
                        intercept: b.intercept,
                    })
                    .collect();
                make_explicit(
                    Interval {
                        lo: omega[0],
                        hi: omega[1],
                    },
                    &specs,
                )
            }
        }
    }
}

/// Return-time (roof) selection.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TauSpec {
    Constant { value: f64 },
    LorenzLog { lambda: f64 },
}

impl TauSpec {
    pub fn build(&self) -> Result<ReturnTime> {
        match self {
            TauSpec::Constant { value } => ReturnTime::constant(*value),
            TauSpec::LorenzLog { lambda } => ReturnTime::lorenz_log(*lambda),
        }
    }
}

/// The dynamical system under study.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub map: MapSpec,
    pub tau: TauSpec,
}

/// Task selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Check,
    Density,
    Correlation,
    LyVerify,
    Resonances,
    RhoHat,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Check => "check",
            TaskKind::Density => "density",
            TaskKind::Correlation => "correlation",
            TaskKind::LyVerify => "ly_verify",
            TaskKind::Resonances => "resonances",
            TaskKind::RhoHat => "rho_hat",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "check" => Ok(TaskKind::Check),
            "density" => Ok(TaskKind::Density),
            "correlation" => Ok(TaskKind::Correlation),
            "ly_verify" => Ok(TaskKind::LyVerify),
            "resonances" => Ok(TaskKind::Resonances),
            "rho_hat" => Ok(TaskKind::RhoHat),
            other => Err(Error::InvalidParameter(format!(
                "unknown task '{other}' (expected one of check, density, correlation, \
                 ly_verify, resonances, rho_hat)"
            ))),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A complex number in config files.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexSpec {
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

impl From<ComplexSpec> for Complex64 {
    fn from(c: ComplexSpec) -> Self {
        Complex64::new(c.re, c.im)
    }
}

/// Strip grid in config files.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub re_range: [f64; 2],
    pub im_range: [f64; 2],
    pub n_re: usize,
    pub n_im: usize,
}

/// Per-task parameters. All fields optional at parse time; [`RunConfig::validate`]
/// enforces what the selected task actually needs.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskParams {
    // Shared numerics.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_cells: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quad_n: Option<usize>,
    // Regularity / strip parameters.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_z: Option<usize>,
    // Observables by built-in name: const, coordinate_x, fiber_phase.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    // Lasota–Yorke verification.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub twist: Option<ComplexSpec>,
    // Resonance scan.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refine_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proven_sigma: Option<f64>,
    // Transformed-correlation evaluation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_values: Option<Vec<ComplexSpec>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_t: Option<usize>,
}

/// Complete run description.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub task: TaskKind,
    #[serde(default)]
    pub params: TaskParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// Parse from a JSON string; diagnostics name the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::InvalidParameter(format!("config error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read and parse a config file.
    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::InvalidParameter(format!(
                "cannot read config {}: {e}",
                path.as_ref().display()
            ))
        })?;
        Self::from_json(&text)
    }

    /// Check that the parameters required by the selected task are present.
    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let need = |ok: bool, field: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "task '{}' requires params.{field}",
                    self.task
                )))
            }
        };
        match self.task {
            TaskKind::Check => {
                need(p.sigma.is_some(), "sigma")?;
                // alpha may instead come from the parameter recipe (lorenz + gamma).
                let has_recipe =
                    matches!(self.system.map, MapSpec::Lorenz { .. }) && p.gamma.is_some();
                need(p.alpha.is_some() || has_recipe, "alpha (or gamma on a lorenz map)")?;
            }
            TaskKind::Density => {}
            TaskKind::Correlation => {
                need(p.t_grid.as_ref().is_some_and(|g| !g.is_empty()), "t_grid")?;
            }
            TaskKind::LyVerify => {
                need(p.alpha.is_some(), "alpha")?;
            }
            TaskKind::Resonances => {
                need(p.grid.is_some(), "grid")?;
            }
            TaskKind::RhoHat => {
                need(
                    p.z_values.as_ref().is_some_and(|z| !z.is_empty()),
                    "z_values",
                )?;
            }
        }
        if let Some(name) = &p.u {
            observable_by_name(name)?;
        }
        if let Some(name) = &p.v {
            observable_by_name(name)?;
        }
        Ok(())
    }
}

/// Built-in observables addressable from config files.
pub fn observable_by_name(name: &str) -> Result<Observable> {
    match name {
        "const" => Ok(Observable::constant(Complex64::new(1.0, 0.0))),
        "coordinate_x" => Ok(Observable::coordinate_x()),
        "fiber_phase" => Ok(Observable::fiber_phase()),
        other => Err(Error::InvalidParameter(format!(
            "unknown observable '{other}' (expected const, coordinate_x, or fiber_phase)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let text = r#"{
            "system": {
                "map": {"family": "lorenz", "lambda": 1.0, "beta": 0.5, "i_max": 40},
                "tau": {"kind": "lorenz_log", "lambda": 1.0}
            },
            "task": "check",
            "params": {"sigma": 0.15, "gamma": 0.5},
            "output_dir": "out",
            "seed": 7
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.task, TaskKind::Check);
        assert_eq!(cfg.seed, 7);
        let map = cfg.system.map.build().unwrap();
        assert_eq!(map.n_branches(), 40);
        assert!(cfg.system.tau.build().is_ok());
    }

    #[test]
    fn rejects_unknown_fields_and_missing_params() {
        let typo = r#"{
            "system": {"map": {"family": "doubling"}, "tau": {"kind": "constant", "value": 1.0}},
            "task": "density",
            "paramz": {}
        }"#;
        let err = RunConfig::from_json(typo).unwrap_err();
        assert!(err.to_string().contains("paramz"), "diagnostic: {err}");

        let missing = r#"{
            "system": {"map": {"family": "doubling"}, "tau": {"kind": "constant", "value": 1.0}},
            "task": "resonances"
        }"#;
        let err = RunConfig::from_json(missing).unwrap_err();
        assert!(err.to_string().contains("params.grid"), "diagnostic: {err}");
    }

    #[test]
    fn explicit_map_and_observables() {
        let text = r#"{
            "system": {
                "map": {"family": "explicit", "omega": [0.0, 1.0], "branches": [
                    {"lo": 0.0, "hi": 0.5, "slope": 2.0, "intercept": 0.0},
                    {"lo": 0.5, "hi": 1.0, "slope": 2.0, "intercept": -1.0}
                ]},
                "tau": {"kind": "constant", "value": 1.0}
            },
            "task": "correlation",
            "params": {"t_grid": [0.5, 1.0], "u": "fiber_phase", "v": "const"}
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        let map = cfg.system.map.build().unwrap();
        assert_eq!(map.n_branches(), 2);
        assert!(observable_by_name("bogus").is_err());
    }
}
