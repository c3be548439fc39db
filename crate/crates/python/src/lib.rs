//! Python bindings: run presets or scenario files and evaluate the analytic
//! reflection model.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use afc_core::fit::ReflectionModel;
use afcsim::bundle::write_bundle;
use afcsim::{presets, resolve_scenario, Scenario};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn execute(mut sc: Scenario, seed: Option<u64>, out: Option<PathBuf>) -> PyResult<BTreeMap<String, f64>> {
    if let Some(s) = seed {
        sc.seed = s;
    }
    let t = Instant::now();
    let result = afcsim::run(&sc);
    if let Some(dir) = out {
        write_bundle(&dir, &sc, &result, t.elapsed().as_secs_f64()).map_err(|e| PyRuntimeError::new_err(format!("{e:#}")))?;
    }
    result.map(|r| r.summary).map_err(|e| PyRuntimeError::new_err(format!("{}: {e:#}", sc.name)))
}

/// Names of the bundled presets.
#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    presets::PRESETS.iter().map(|(n, _)| *n).collect()
}

/// TOML text of a bundled preset.
#[pyfunction]
fn preset_text(name: &str) -> PyResult<&'static str> {
    presets::preset(name).ok_or_else(|| PyValueError::new_err(format!("no preset named {name}")))
}

/// Run a scenario file or preset name; returns the summary. With `out`, a
/// result bundle is written there as well.
#[pyfunction]
#[pyo3(signature = (scenario, seed=None, out=None))]
fn run(py: Python<'_>, scenario: &str, seed: Option<u64>, out: Option<PathBuf>) -> PyResult<BTreeMap<String, f64>> {
    let sc = resolve_scenario(scenario).map_err(|e| PyValueError::new_err(format!("{scenario}: {e}")))?;
    py.detach(|| execute(sc, seed, out))
}

/// Run a scenario given as TOML text.
#[pyfunction]
#[pyo3(signature = (text, seed=None, out=None))]
fn run_toml(py: Python<'_>, text: &str, seed: Option<u64>, out: Option<PathBuf>) -> PyResult<BTreeMap<String, f64>> {
    let sc = Scenario::from_toml(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.detach(|| execute(sc, seed, out))
}

/// |r|² of the cavity + Lorentzian-line model at `freqs` (MHz).
#[pyfunction]
#[pyo3(signature = (freqs, omega_c, kappa_in, kappa_i, cooperativity, line_fwhm, gamma_h=0.002136))]
fn reflectance(
    freqs: Vec<f64>,
    omega_c: f64,
    kappa_in: f64,
    kappa_i: f64,
    cooperativity: f64,
    line_fwhm: f64,
    gamma_h: f64,
) -> Vec<f64> {
    let m = ReflectionModel { omega_c, kappa_in, kappa_i, cooperativity, line_fwhm };
    freqs.iter().map(|&f| m.reflectance(gamma_h, f)).collect()
}

#[pymodule]
fn afcsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", afcsim_version())?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add_function(wrap_pyfunction!(preset_text, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_toml, m)?)?;
    m.add_function(wrap_pyfunction!(reflectance, m)?)?;
    Ok(())
}

fn afcsim_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}
