//! Python bindings for the semiflow-spectra toolkit.
//!
//! Every function that needs a dynamical system takes a `system` JSON string with
//! the same schema as the CLI config's `"system"` field, e.g.
//! `{"map": {"family": "doubling"}, "tau": {"kind": "constant", "value": 1.0}}`.
//! Observables are referenced by the same names the CLI accepts
//! (`"constant"`, `"coordinate_x"`, `"fiber_phase"`).

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use semiflow_spectra::config::{observable_by_name, SystemSpec};
use semiflow_spectra::gbv::{self, GbvParams, GridFunction};
use semiflow_spectra::hypothesis::{self, ReturnTime};
use semiflow_spectra::maps::{Interval, PiecewiseMap};
use semiflow_spectra::resonances::{self, StripGrid};
use semiflow_spectra::suspension::SuspensionSemiflow;
use semiflow_spectra::transfer::{self, Weight};

/// A point in the complex plane paired with a residual quality measure.
type LocatedValue = (Complex64, f64);

fn to_py_err(e: semiflow_spectra::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_system(text: &str) -> PyResult<(PiecewiseMap, ReturnTime)> {
    let spec: SystemSpec = serde_json::from_str(text)
        .map_err(|e| PyValueError::new_err(format!("system spec error: {e}")))?;
    let map = spec.map.build().map_err(to_py_err)?;
    let tau = spec.tau.build().map_err(to_py_err)?;
    Ok((map, tau))
}

fn build_semiflow(text: &str, n_cells: usize, tol: f64) -> PyResult<SuspensionSemiflow> {
    let (map, tau) = parse_system(text)?;
    SuspensionSemiflow::new(map, tau, n_cells, tol).map_err(to_py_err)
}

/// Fixed density of the unit-weight transfer operator on `n_cells` cells.
/// Returns `(midpoints, values)`; values are real parts of the computed density.
#[pyfunction]
#[pyo3(signature = (system, n_cells, tol=1e-12))]
fn invariant_density(
    system: &str,
    n_cells: usize,
    tol: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let (map, _tau) = parse_system(system)?;
    let h = transfer::invariant_density(&map, n_cells, tol).map_err(to_py_err)?;
    let mids = (0..h.n()).map(|k| h.midpoint(k)).collect();
    let vals = h.values().iter().map(|c| c.re).collect();
    Ok((mids, vals))
}

/// Oscillation seminorm of a piecewise-constant function given by `values`
/// on a uniform grid over `(lo, hi)`, with exponent `alpha` and scale cap `eps0`.
#[pyfunction]
fn gbv_seminorm(
    values: Vec<Complex64>,
    lo: f64,
    hi: f64,
    alpha: f64,
    eps0: f64,
) -> PyResult<f64> {
    let omega = Interval::new(lo, hi).map_err(to_py_err)?;
    let h = GridFunction::from_values(omega, values).map_err(to_py_err)?;
    let p = GbvParams::new(alpha, eps0).map_err(to_py_err)?;
    gbv::seminorm(&h, &p).map_err(to_py_err)
}

/// Certified contraction factor sup_i σ_i^α · sup|ξ| of the weighted transfer
/// operator; `twist` other than 0 uses the weight e^(−twist·τ).
#[pyfunction]
#[pyo3(signature = (system, alpha, twist=Complex64::new(0.0, 0.0)))]
fn contraction_bound(system: &str, alpha: f64, twist: Complex64) -> PyResult<f64> {
    let (map, tau) = parse_system(system)?;
    let w = if twist == Complex64::new(0.0, 0.0) {
        Weight::Unit
    } else {
        Weight::twisted(twist, tau)
    };
    transfer::lambda_bound(&map, &w, alpha).map_err(to_py_err)
}

/// Run the hypothesis checker at regularity `alpha` and strip width `sigma`,
/// sampling `n_z` twist values. Returns the full report as a JSON string.
#[pyfunction]
#[pyo3(signature = (system, alpha, sigma, n_z=5))]
fn check_hypotheses(system: &str, alpha: f64, sigma: f64, n_z: usize) -> PyResult<String> {
    let (map, tau) = parse_system(system)?;
    let report = hypothesis::check_conditions(&map, &tau, alpha, sigma, n_z).map_err(to_py_err)?;
    serde_json::to_string(&report)
        .map_err(|e| PyValueError::new_err(format!("report serialization error: {e}")))
}

/// Regularity/strip recipe for the power-law family with parameters
/// (lambda, beta): returns `(alpha, sigma_max)` at tail-split exponent `gamma`.
#[pyfunction]
fn lorenz_parameters(lambda: f64, beta: f64, gamma: f64) -> PyResult<(f64, f64)> {
    hypothesis::lorenz_params(lambda, beta, gamma).map_err(to_py_err)
}

/// Correlation of observables `u`, `v` (names as in the CLI) at time `t`.
#[pyfunction]
#[pyo3(signature = (system, u, v, t, n_cells=512, quad_n=32))]
fn correlation(
    system: &str,
    u: &str,
    v: &str,
    t: f64,
    n_cells: usize,
    quad_n: usize,
) -> PyResult<Complex64> {
    let sf = build_semiflow(system, n_cells, 1e-12)?;
    let ou = observable_by_name(u).map_err(to_py_err)?;
    let ov = observable_by_name(v).map_err(to_py_err)?;
    let cv = sf.correlation(&ou, &ov, t, quad_n).map_err(to_py_err)?;
    Ok(cv.cor)
}

/// Laplace-side correlation value at twist `z` via the operator series:
/// returns `(value, truncation_bound)`.
#[pyfunction]
#[pyo3(signature = (system, u, v, z, n_max=200, n_cells=256))]
fn rho_hat_series(
    system: &str,
    u: &str,
    v: &str,
    z: Complex64,
    n_max: usize,
    n_cells: usize,
) -> PyResult<(Complex64, f64)> {
    let sf = build_semiflow(system, n_cells, 1e-12)?;
    let ou = observable_by_name(u).map_err(to_py_err)?;
    let ov = observable_by_name(v).map_err(to_py_err)?;
    let sv = resonances::rho_hat_series(&sf, &ou, &ov, z, n_max, n_cells).map_err(to_py_err)?;
    Ok((sv.value, sv.truncation_bound))
}

/// Scan the rectangle `[re_lo, re_hi] × [im_lo, im_hi]` for resolvent poles of
/// the twisted transfer operator. Returns `(poles, unresolved)` where each pole
/// is `(location, residual)` and each unresolved cluster is the same shape.
#[pyfunction]
#[pyo3(signature = (system, re_lo, re_hi, im_lo, im_hi, n_re, n_im, n_cells=256, refine_tol=1e-8))]
#[allow(clippy::too_many_arguments)]
fn scan_poles(
    system: &str,
    re_lo: f64,
    re_hi: f64,
    im_lo: f64,
    im_hi: f64,
    n_re: usize,
    n_im: usize,
    n_cells: usize,
    refine_tol: f64,
) -> PyResult<(Vec<LocatedValue>, Vec<LocatedValue>)> {
    let sf = build_semiflow(system, n_cells, 1e-12)?;
    let grid =
        StripGrid::new((re_lo, re_hi), (im_lo, im_hi), n_re, n_im).map_err(to_py_err)?;
    let scan = resonances::resonance_scan(&sf, grid, n_cells, refine_tol).map_err(to_py_err)?;
    let poles = scan
        .poles
        .iter()
        .map(|p| (Complex64::new(p.re, p.im), p.residual))
        .collect();
    let unresolved = scan
        .unresolved
        .iter()
        .map(|c| (Complex64::new(c.re, c.im), c.residual))
        .collect();
    Ok((poles, unresolved))
}

#[pymodule]
fn semiflow_spectra_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(invariant_density, m)?)?;
    m.add_function(wrap_pyfunction!(gbv_seminorm, m)?)?;
    m.add_function(wrap_pyfunction!(contraction_bound, m)?)?;
    m.add_function(wrap_pyfunction!(check_hypotheses, m)?)?;
    m.add_function(wrap_pyfunction!(lorenz_parameters, m)?)?;
    m.add_function(wrap_pyfunction!(correlation, m)?)?;
    m.add_function(wrap_pyfunction!(rho_hat_series, m)?)?;
    m.add_function(wrap_pyfunction!(scan_poles, m)?)?;
    Ok(())
}
