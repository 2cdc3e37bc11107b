//! End-to-end flows across modules: config → system → operators → flow → outputs.

use num_complex::Complex64;
use semiflow_spectra::config::RunConfig;
use semiflow_spectra::hypothesis::ReturnTime;
use semiflow_spectra::maps::{
    make_doubling, make_explicit, make_lueroth, AffineBranchSpec, Interval, PiecewiseMap,
};
use semiflow_spectra::resonances::{rho_hat_quadrature, rho_hat_series};
use semiflow_spectra::suspension::{b_term_decay, Observable, SuspensionSemiflow};
use semiflow_spectra::tasks::run_task;

/// Two-branch expanding map with an off-dyadic cut, so grid-midpoint orbits do not
/// systematically strike branch endpoints.
fn skew_two_branch() -> PiecewiseMap {
    let c = 0.37;
    make_explicit(
        Interval { lo: 0.0, hi: 1.0 },
        &[
            AffineBranchSpec {
                domain: Interval { lo: 0.0, hi: c },
                slope: 1.0 / c,
                intercept: 0.0,
            },
            AffineBranchSpec {
                domain: Interval { lo: c, hi: 1.0 },
                slope: 1.0 / (1.0 - c),
                intercept: -c / (1.0 - c),
            },
        ],
    )
    .unwrap()
}

#[test]
fn countable_branch_flow_is_a_probability_space() {
    // A 12-branch map with certified tail, constant roof: the flow measure must be a
    // probability and decorrelate constants immediately.
    let map = make_lueroth(12).unwrap();
    let sf = SuspensionSemiflow::new(map, ReturnTime::constant(1.0).unwrap(), 256, 1e-8).unwrap();
    let one = Observable::constant(Complex64::new(1.0, 0.0));
    let mass = sf.mu_integrate(&one, 16).unwrap();
    assert!((mass.re - 1.0).abs() < 1e-8, "mass = {mass}");
    assert!(mass.im.abs() < 1e-12);

    let c = sf.correlation(&one, &one, 1.0, 16).unwrap();
    assert!(c.cor.norm() < 1e-8, "constants should not correlate: {:?}", c);
}

#[test]
fn transform_oracles_agree_on_an_unbounded_roof() {
    // Logarithmic roof over an off-dyadic two-branch map, coordinate observable: the
    // operator series and the time-domain quadrature are independent paths to the
    // same value.
    let sf = SuspensionSemiflow::new(
        skew_two_branch(),
        ReturnTime::lorenz_log(1.0).unwrap(),
        256,
        1e-10,
    )
    .unwrap();
    let u = Observable::coordinate_x();
    let z = Complex64::new(0.8, 0.0);
    let series = rho_hat_series(&sf, &u, &u, z, 300, 256).unwrap();
    let quad = rho_hat_quadrature(&sf, &u, &u, z, 30.0, 60).unwrap();
    let tol = 1e-3 * (1.0 + series.value.norm());
    assert!(
        (series.value - quad.value).norm() <= tol,
        "series {} vs quadrature {} (tol {tol})",
        series.value,
        quad.value
    );
}

#[test]
fn decay_envelope_holds_on_the_log_roof() {
    let sf = SuspensionSemiflow::new(
        make_doubling(),
        ReturnTime::lorenz_log(1.0).unwrap(),
        256,
        1e-10,
    )
    .unwrap();
    let u = Observable::coordinate_x();
    let decay = b_term_decay(&sf, &u, &u, 0.15, &[0.5, 1.0, 2.0, 4.0], 32).unwrap();
    assert!(decay.c_env.is_finite() && decay.c_env >= 0.0);
    for row in &decay.rows {
        assert!(
            row.b_abs <= row.bound * (1.0 + 1e-12),
            "t = {}: {} > {}",
            row.t,
            row.b_abs,
            row.bound
        );
    }
}

#[test]
fn config_driven_correlation_run_writes_consistent_outputs() {
    let text = r#"{
        "system": {
            "map": {"family": "explicit", "omega": [0.0, 1.0], "branches": [
                {"lo": 0.0, "hi": 0.25, "slope": 4.0, "intercept": 0.0},
                {"lo": 0.25, "hi": 1.0, "slope": 1.3333333333333333, "intercept": -0.3333333333333333}
            ]},
            "tau": {"kind": "constant", "value": 0.7}
        },
        "task": "correlation",
        "params": {"n_cells": 128, "t_grid": [0.0, 0.35, 0.7, 1.4], "u": "fiber_phase", "v": "fiber_phase"},
        "seed": 3
    }"#;
    let cfg = RunConfig::from_json(text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_task(&cfg, dir.path(), false).unwrap();
    assert_eq!(outcome.exit_code, 0);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    let outputs: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    for name in ["correlation.csv", "b_term.csv", "manifest.json"] {
        assert!(outputs.contains(&name), "{name} not referenced");
        assert!(dir.path().join(name).exists(), "{name} not written");
    }
    let rows = std::fs::read_to_string(dir.path().join("correlation.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 4, "header plus one row per t");
    assert_eq!(manifest["seed"], 3);
}
