//! Task runners behind the command-line interface: each task builds the system from a
//! [`RunConfig`](crate::config::RunConfig), computes its outputs, writes CSV/JSON files
//! into the output directory, and finishes with a `manifest.json` that echoes the
//! config and references every file written.

use crate::config::{observable_by_name, RunConfig, TaskKind};
use crate::error::{Error, Result};
use crate::gbv::GbvParams;
use crate::hypothesis::{check_conditions, lorenz_params, HypothesisReport};
use crate::maps::PiecewiseMap;
use crate::resonances::{resonance_scan, rho_hat_quadrature, rho_hat_series, StripGrid};
use crate::suspension::{b_term_decay, write_curve_csv, Observable, SuspensionSemiflow};
use crate::transfer::{invariant_density_full, verify_ly, LyReport, Weight};
use num_complex::Complex64;
use serde::Serialize;
use std::collections::BTreeMap;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Exit code for a run whose computations succeeded but whose hypothesis verdicts
/// failed: the data is written, the conclusion is negative.
pub const EXIT_VERDICT_FAILURE: i32 = 2;

const DEFAULT_DENSITY_CELLS: usize = 1024;
const DEFAULT_FLOW_CELLS: usize = 512;
const DEFAULT_DENSITY_TOL: f64 = 1e-12;
const DEFAULT_QUAD_N: usize = 32;
const DEFAULT_ENVELOPE_SIGMA: f64 = 0.1;
const DEFAULT_Z_SAMPLES: usize = 5;
const DEFAULT_EPS0: f64 = 0.025;
const DEFAULT_DELTA: f64 = 1.0;
const DEFAULT_LY_TRIALS: usize = 150;
const DEFAULT_REFINE_TOL: f64 = 1e-8;
const DEFAULT_N_MAX: usize = 200;
const DEFAULT_T_MAX: f64 = 40.0;
const DEFAULT_N_T: usize = 80;

/// What a completed run produced.
#[derive(Clone, Debug)]
pub struct TaskOutcome {
    pub exit_code: i32,
    /// File names written into the output directory (manifest last).
    pub outputs: Vec<String>,
}

#[derive(Serialize)]
struct ToolInfo {
    name: &'static str,
    version: &'static str,
}

/// Accumulates outputs/timings/tolerances during a run and renders the manifest.
struct RunContext<'a> {
    cfg: &'a RunConfig,
    out_dir: PathBuf,
    outputs: Vec<String>,
    timings_ms: BTreeMap<String, u128>,
    tolerances: BTreeMap<String, f64>,
    started: Instant,
}

impl<'a> RunContext<'a> {
    fn new(cfg: &'a RunConfig, out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir)?;
        Ok(RunContext {
            cfg,
            out_dir: out_dir.to_path_buf(),
            outputs: Vec::new(),
            timings_ms: BTreeMap::new(),
            tolerances: BTreeMap::new(),
            started: Instant::now(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out_dir.join(name)
    }

    fn tol(&mut self, key: &str, value: f64) {
        self.tolerances.insert(key.to_string(), value);
    }

    fn timing(&mut self, key: &str, since: Instant) {
        self.timings_ms
            .insert(key.to_string(), since.elapsed().as_millis());
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::InvalidParameter(format!("serialization failed: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

fn observables(cfg: &RunConfig) -> Result<(Observable, Observable)> {
    let u = observable_by_name(cfg.params.u.as_deref().unwrap_or("const"))?;
    let v = observable_by_name(cfg.params.v.as_deref().unwrap_or("const"))?;
    Ok((u, v))
}

fn build_flow(cfg: &RunConfig, map: PiecewiseMap, n_cells: usize, tol: f64) -> Result<SuspensionSemiflow> {
    SuspensionSemiflow::new(map, cfg.system.tau.build()?, n_cells, tol)
}

/// Execute the configured task, writing outputs and `manifest.json` into `out_dir`.
/// `override_strip` permits resonance scans outside the proven-strip clamp.
pub fn run_task(cfg: &RunConfig, out_dir: &Path, override_strip: bool) -> Result<TaskOutcome> {
    cfg.validate()?;
    let mut ctx = RunContext::new(cfg, out_dir)?;
    let map = cfg.system.map.build()?;
    let exit_code = match cfg.task {
        TaskKind::Check => run_check(cfg, &mut ctx, &map)?,
        TaskKind::Density => run_density(cfg, &mut ctx, &map)?,
        TaskKind::Correlation => run_correlation(cfg, &mut ctx, map)?,
        TaskKind::LyVerify => run_ly_verify(cfg, &mut ctx, &map)?,
        TaskKind::Resonances => run_resonances(cfg, &mut ctx, map, override_strip)?,
        TaskKind::RhoHat => run_rho_hat(cfg, &mut ctx, map)?,
    };
    Ok(TaskOutcome {
        exit_code,
        outputs: ctx.outputs,
    })
}

fn run_check(cfg: &RunConfig, ctx: &mut RunContext<'_>, map: &PiecewiseMap) -> Result<i32> {
    let tau = cfg.system.tau.build()?;
    let p = &cfg.params;
    let sigma = p.sigma.expect("validated");
    // alpha either given or derived from the parameter recipe on the power-law family.
    let (alpha, recipe) = match (p.alpha, &cfg.system.map) {
        (Some(a), _) => (a, None),
        (None, crate::config::MapSpec::Lorenz { lambda, beta, .. }) => {
            let gamma = p.gamma.expect("validated");
            let (a, sigma_max) = lorenz_params(*lambda, *beta, gamma)?;
            (a, Some((a, sigma_max)))
        }
        (None, _) => unreachable!("validated"),
    };
    let n_z = p.n_z.unwrap_or(DEFAULT_Z_SAMPLES);
    ctx.tol("sigma", sigma);
    ctx.tol("alpha", alpha);

    let t0 = Instant::now();
    let report = check_conditions(map, &tau, alpha, sigma, n_z)?;
    ctx.timing("check", t0);
    print_check_table(&report);
    ctx.write_json("hypothesis_report.json", &report)?;

    let all_pass = report.verdicts.holder && report.verdicts.expanding && report.verdicts.summable;
    let summary = serde_json::json!({
        "verdicts": {
            "holder": report.verdicts.holder,
            "expanding": report.verdicts.expanding,
            "summable": report.verdicts.summable,
        },
        "first_failing_branch": report.first_failing_branch,
        "iterate_suggestion": report.iterate_suggestion,
        "recipe": recipe.map(|(a, s)| serde_json::json!({"alpha": a, "sigma_max": s})),
    });
    ctx_finish_in_place(ctx, summary)?;
    Ok(if all_pass { 0 } else { EXIT_VERDICT_FAILURE })
}

fn print_check_table(r: &HypothesisReport) {
    let flag = |b: bool| if b { "pass" } else { "FAIL" };
    println!("hypothesis check  alpha = {:.6}  sigma = {:.6}", r.alpha, r.sigma);
    println!(
        "  kernel regularity : {}  (max sampled constant {:.4e})",
        flag(r.verdicts.holder),
        r.holder_constants.iter().cloned().fold(0.0f64, f64::max)
    );
    println!(
        "  expansion margin  : {}  (sup {:.6}, tail {:.6})",
        flag(r.verdicts.expanding),
        r.expanding_sup,
        r.expanding_tail_sup
    );
    println!(
        "  branch summability: {}  (sum {:.6})",
        flag(r.verdicts.summable),
        r.sum_value
    );
    println!("  weighted tails    : integral {:.6}", r.tails_integral);
    if let Some(i) = r.first_failing_branch {
        println!("  first failing branch: {i}");
    }
    if let Some(n) = r.iterate_suggestion {
        match r.iterate_alpha {
            Some(a) => println!("  iterate suggestion: n = {n} (recheck alpha = {a})"),
            None => println!("  iterate suggestion: n = {n}"),
        }
    }
}

fn run_density(cfg: &RunConfig, ctx: &mut RunContext<'_>, map: &PiecewiseMap) -> Result<i32> {
    let n_cells = cfg.params.n_cells.unwrap_or(DEFAULT_DENSITY_CELLS);
    let tol = cfg.params.tol.unwrap_or(DEFAULT_DENSITY_TOL);
    ctx.tol("density_residual", tol);
    let t0 = Instant::now();
    let (density, diag) = invariant_density_full(map, n_cells, tol)?;
    ctx.timing("density", t0);
    let path = ctx.path("density.csv");
    density.write_csv(path)?;
    let summary = serde_json::json!({
        "n_cells": n_cells,
        "iterations": diag.iterations,
        "residual_l1": diag.residual_l1,
        "nonunique_warning": diag.nonunique_warning,
    });
    ctx_finish_in_place(ctx, summary)?;
    Ok(0)
}

fn run_correlation(cfg: &RunConfig, ctx: &mut RunContext<'_>, map: PiecewiseMap) -> Result<i32> {
    let p = &cfg.params;
    let n_cells = p.n_cells.unwrap_or(DEFAULT_FLOW_CELLS);
    let tol = p.tol.unwrap_or(DEFAULT_DENSITY_TOL);
    let quad_n = p.quad_n.unwrap_or(DEFAULT_QUAD_N);
    let sigma = p.sigma.unwrap_or(DEFAULT_ENVELOPE_SIGMA);
    let t_grid = p.t_grid.clone().expect("validated");
    let (u, v) = observables(cfg)?;
    ctx.tol("density_residual", tol);
    ctx.tol("quad_n", quad_n as f64);
    ctx.tol("envelope_sigma", sigma);

    let t0 = Instant::now();
    let sf = build_flow(cfg, map, n_cells, tol)?;
    ctx.timing("build_flow", t0);

    let t1 = Instant::now();
    let values = t_grid
        .iter()
        .map(|&t| sf.correlation(&u, &v, t, quad_n))
        .collect::<Result<Vec<_>>>()?;
    let decay = b_term_decay(&sf, &u, &v, sigma, &t_grid, quad_n)?;
    ctx.timing("correlation", t1);

    let cor_rows: Vec<(f64, Complex64, f64)> = t_grid
        .iter()
        .zip(&values)
        .zip(&decay.rows)
        .map(|((&t, cv), row)| (t, cv.cor, row.bound))
        .collect();
    let b_rows: Vec<(f64, Complex64, f64)> = t_grid
        .iter()
        .zip(&values)
        .zip(&decay.rows)
        .map(|((&t, cv), row)| (t, cv.b_term, row.bound))
        .collect();
    write_curve_csv(ctx.path("correlation.csv"), &cor_rows)?;
    write_curve_csv(ctx.path("b_term.csv"), &b_rows)?;

    let summary = serde_json::json!({
        "n_cells": n_cells,
        "t_grid_len": t_grid.len(),
        "envelope_c": decay.c_env,
        "envelope_sigma": decay.sigma,
    });
    ctx_finish_in_place(ctx, summary)?;
    Ok(0)
}

fn run_ly_verify(cfg: &RunConfig, ctx: &mut RunContext<'_>, map: &PiecewiseMap) -> Result<i32> {
    let p = &cfg.params;
    let alpha = p.alpha.expect("validated");
    let eps0 = p.eps0.unwrap_or(DEFAULT_EPS0);
    let delta = p.delta.unwrap_or(DEFAULT_DELTA);
    let trials = p.trials.unwrap_or(DEFAULT_LY_TRIALS);
    let gbv = GbvParams::new(alpha, eps0)?;
    ctx.tol("alpha", alpha);
    ctx.tol("eps0", eps0);
    ctx.tol("delta", delta);

    let mut weights: Vec<(&str, Weight)> = vec![("unit", Weight::Unit)];
    if let Some(tw) = p.twist {
        weights.push((
            "twisted",
            Weight::twisted(tw.into(), cfg.system.tau.build()?),
        ));
    }

    #[derive(Serialize)]
    struct LabeledReport<'l> {
        weight: &'l str,
        report: LyReport,
    }
    let mut reports = Vec::new();
    let mut total_violations = 0usize;
    let t0 = Instant::now();
    for (label, w) in &weights {
        let report = verify_ly(map, w, &gbv, delta, trials)?;
        total_violations += report.violations.len();
        reports.push(LabeledReport {
            weight: label,
            report,
        });
    }
    ctx.timing("ly_verify", t0);

    {
        let path = ctx.path("violations.csv");
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "weight,trial,lhs,rhs")?;
        for lr in &reports {
            for (trial, lhs, rhs) in &lr.report.violations {
                writeln!(f, "{},{},{},{}", lr.weight, trial, lhs, rhs)?;
            }
        }
        f.flush()?;
    }
    ctx.write_json("ly_report.json", &reports)?;

    let summary = serde_json::json!({
        "weights": reports.iter().map(|r| r.weight).collect::<Vec<_>>(),
        "trials_per_weight": trials,
        "total_violations": total_violations,
    });
    ctx_finish_in_place(ctx, summary)?;
    Ok(0)
}

fn run_resonances(
    cfg: &RunConfig,
    ctx: &mut RunContext<'_>,
    map: PiecewiseMap,
    override_strip: bool,
) -> Result<i32> {
    let p = &cfg.params;
    let gs = p.grid.expect("validated");
    let n_cells = p.n_cells.unwrap_or(DEFAULT_FLOW_CELLS);
    let tol = p.tol.unwrap_or(DEFAULT_DENSITY_TOL);
    let refine_tol = p.refine_tol.unwrap_or(DEFAULT_REFINE_TOL);
    ctx.tol("refine_tol", refine_tol);
    ctx.tol("density_residual", tol);

    // The strip's left edge must stay inside the verified region unless the caller
    // explicitly overrides; results beyond it are marked in the outputs.
    let outside = match p.proven_sigma {
        Some(ps) => gs.re_range[0] < -ps,
        None => true,
    };
    if outside && !override_strip {
        return Err(Error::InvalidParameter(match p.proven_sigma {
            Some(ps) => format!(
                "grid re_range extends left of the proven strip boundary -{ps}; \
                 pass --override-strip to scan anyway"
            ),
            None => "params.proven_sigma missing (run the check task first); \
                     pass --override-strip to scan without a verified strip"
                .to_string(),
        }));
    }

    let grid = StripGrid::new(
        (gs.re_range[0], gs.re_range[1]),
        (gs.im_range[0], gs.im_range[1]),
        gs.n_re,
        gs.n_im,
    )?;
    let t0 = Instant::now();
    let sf = build_flow(cfg, map, n_cells, tol)?;
    let scan = resonance_scan(&sf, grid, n_cells, refine_tol)?;
    ctx.timing("scan", t0);

    scan.write_csv(ctx.path("scan.csv"))?;
    #[derive(Serialize)]
    struct PoleFile<'p> {
        n_cells: usize,
        grid: StripGrid,
        outside_proven_strip: bool,
        poles: &'p [crate::resonances::Pole],
        unresolved: &'p [crate::resonances::UnresolvedCluster],
    }
    ctx.write_json(
        "poles.json",
        &PoleFile {
            n_cells,
            grid,
            outside_proven_strip: outside,
            poles: &scan.poles,
            unresolved: &scan.unresolved,
        },
    )?;

    let summary = serde_json::json!({
        "n_poles": scan.poles.len(),
        "n_unresolved": scan.unresolved.len(),
        "outside_proven_strip": outside,
    });
    ctx_finish_in_place(ctx, summary)?;
    Ok(0)
}

fn run_rho_hat(cfg: &RunConfig, ctx: &mut RunContext<'_>, map: PiecewiseMap) -> Result<i32> {
    let p = &cfg.params;
    let z_values = p.z_values.clone().expect("validated");
    let n_cells = p.n_cells.unwrap_or(DEFAULT_FLOW_CELLS);
    let tol = p.tol.unwrap_or(DEFAULT_DENSITY_TOL);
    let n_max = p.n_max.unwrap_or(DEFAULT_N_MAX);
    let t_max = p.t_max.unwrap_or(DEFAULT_T_MAX);
    let n_t = p.n_t.unwrap_or(DEFAULT_N_T);
    let (u, v) = observables(cfg)?;
    ctx.tol("density_residual", tol);
    ctx.tol("t_max", t_max);

    let t0 = Instant::now();
    let sf = build_flow(cfg, map, n_cells, tol)?;
    let mut rows = Vec::new();
    let mut max_disagreement = 0.0f64;
    for zs in &z_values {
        let z: Complex64 = (*zs).into();
        let series = rho_hat_series(&sf, &u, &v, z, n_max, n_cells)?;
        let quad = if z.re > 0.0 {
            Some(rho_hat_quadrature(&sf, &u, &v, z, t_max, n_t)?)
        } else {
            None
        };
        let disagreement = quad
            .as_ref()
            .map(|q| (series.value - q.value).norm())
            .unwrap_or(f64::NAN);
        if disagreement.is_finite() {
            max_disagreement = max_disagreement.max(disagreement);
        }
        rows.push((z, series, quad, disagreement));
    }
    ctx.timing("rho_hat", t0);

    {
        let path = ctx.path("rho_hat.csv");
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            f,
            "re_z,im_z,re_series,im_series,series_bound,re_quad,im_quad,quad_tail_bound,disagreement"
        )?;
        for (z, series, quad, disagreement) in &rows {
            let (qr, qi, qb) = match quad {
                Some(q) => (q.value.re, q.value.im, q.tail_bound),
                None => (f64::NAN, f64::NAN, f64::NAN),
            };
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{}",
                z.re,
                z.im,
                series.value.re,
                series.value.im,
                series.truncation_bound,
                qr,
                qi,
                qb,
                disagreement
            )?;
        }
        f.flush()?;
    }

    let summary = serde_json::json!({
        "n_z": z_values.len(),
        "n_max": n_max,
        "max_disagreement": max_disagreement,
    });
    ctx_finish_in_place(ctx, summary)?;
    Ok(0)
}

/// Write the manifest from inside a runner (the context stays borrowed by the caller).
fn ctx_finish_in_place(ctx: &mut RunContext<'_>, summary: serde_json::Value) -> Result<()> {
    ctx.timings_ms
        .insert("total".into(), ctx.started.elapsed().as_millis());
    #[derive(Serialize)]
    struct Manifest<'m> {
        tool: ToolInfo,
        task: &'m str,
        seed: u64,
        config: &'m RunConfig,
        timings_ms: &'m BTreeMap<String, u128>,
        tolerances: &'m BTreeMap<String, f64>,
        outputs: &'m [String],
        summary: &'m serde_json::Value,
    }
    let mut outputs = ctx.outputs.clone();
    outputs.push("manifest.json".to_string());
    let manifest = Manifest {
        tool: ToolInfo {
            name: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
        },
        task: ctx.cfg.task.as_str(),
        seed: ctx.cfg.seed,
        config: ctx.cfg,
        timings_ms: &ctx.timings_ms,
        tolerances: &ctx.tolerances,
        outputs: &outputs,
        summary: &summary,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::InvalidParameter(format!("serialization failed: {e}")))?;
    std::fs::write(ctx.out_dir.join("manifest.json"), text)?;
    ctx.outputs = outputs;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn doubling_cfg(task_json: &str) -> RunConfig {
        let text = format!(
            r#"{{
                "system": {{
                    "map": {{"family": "doubling"}},
                    "tau": {{"kind": "constant", "value": 1.0}}
                }},
                {task_json}
            }}"#
        );
        RunConfig::from_json(&text).unwrap()
    }

    #[test]
    fn density_task_writes_csv_and_manifest() {
        let cfg = doubling_cfg(r#""task": "density", "params": {"n_cells": 64}"#);
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_task(&cfg, dir.path(), false).unwrap();
        assert_eq!(outcome.exit_code, 0);
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        let outputs: Vec<String> = manifest["outputs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap().to_string())
            .collect();
        assert!(outputs.contains(&"density.csv".to_string()));
        assert!(outputs.contains(&"manifest.json".to_string()));
        // Every referenced file exists; no orphans beyond the manifest itself.
        for name in &outputs {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        let listed: std::collections::BTreeSet<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert_eq!(listed, outputs.iter().cloned().collect());
        // The density itself is flat.
        let text = std::fs::read_to_string(dir.path().join("density.csv")).unwrap();
        for line in text.lines().skip(1) {
            let re: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
            assert!((re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn check_task_exit_codes() {
        // Doubling with a modest strip: all hypotheses hold, exit 0.
        let ok = doubling_cfg(r#""task": "check", "params": {"alpha": 0.5, "sigma": 0.2}"#);
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run_task(&ok, dir.path(), false).unwrap().exit_code, 0);

        // Power-law family via the recipe: branch 0 fails, exit 2, data written.
        let text = r#"{
            "system": {
                "map": {"family": "lorenz", "lambda": 1.0, "beta": 0.5, "i_max": 40},
                "tau": {"kind": "lorenz_log", "lambda": 1.0}
            },
            "task": "check",
            "params": {"sigma": 0.15, "gamma": 0.5}
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let outcome = run_task(&cfg, dir2.path(), false).unwrap();
        assert_eq!(outcome.exit_code, EXIT_VERDICT_FAILURE);
        let report: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir2.path().join("hypothesis_report.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(report["first_failing_branch"], 0);
        assert!(report["iterate_suggestion"].as_u64().is_some());
        assert!((report["alpha"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn resonance_task_requires_strip_clearance() {
        let cfg = doubling_cfg(
            r#""task": "resonances",
               "params": {"grid": {"re_range": [-0.05, 0.0], "im_range": [-0.3, 0.3],
                          "n_re": 2, "n_im": 5}, "n_cells": 32, "refine_tol": 1e-6}"#,
        );
        let dir = tempfile::tempdir().unwrap();
        // No proven sigma in the config: refused without the override.
        let err = run_task(&cfg, dir.path(), false).unwrap_err();
        assert!(err.to_string().contains("override-strip"), "{err}");
        // Override: runs and finds the pole at the origin.
        let outcome = run_task(&cfg, dir.path(), true).unwrap();
        assert_eq!(outcome.exit_code, 0);
        let poles: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("poles.json")).unwrap())
                .unwrap();
        assert_eq!(poles["outside_proven_strip"], true);
        assert_eq!(poles["poles"].as_array().unwrap().len(), 1);

        // With a proven strip covering the grid no override is needed.
        let cfg2 = doubling_cfg(
            r#""task": "resonances",
               "params": {"grid": {"re_range": [-0.05, 0.0], "im_range": [-0.3, 0.3],
                          "n_re": 2, "n_im": 5}, "n_cells": 32, "refine_tol": 1e-6,
                          "proven_sigma": 0.2}"#,
        );
        let dir2 = tempfile::tempdir().unwrap();
        assert_eq!(run_task(&cfg2, dir2.path(), false).unwrap().exit_code, 0);
    }
}
