//! Python bindings for the hybrid-precoding simulator.
//!
//! The surface mirrors the CLI: TOML configs in, JSON or CSV records out.
//! Heavy objects stay on the Rust side; every function speaks strings and
//! scalars so the module needs no Python-side dependencies.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use hybeam::cli_io::{config_hash, parse_config, render_config_toml, render_csv};
use hybeam::entropy::EntropyReport;
use hybeam::simulator::{self, ModelConfig, SimConfig};

fn parse(config_toml: &str) -> PyResult<(SimConfig, Vec<hybeam::simulator::SweepSpec>)> {
    parse_config(config_toml).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Crate version of the underlying simulator.
#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Render the default configuration as TOML (the same document the CLI
/// accepts and emits).
#[pyfunction]
fn default_config_toml() -> PyResult<String> {
    render_config_toml(&SimConfig::default(), &[])
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Validate a TOML config and return its content hash (stable across
/// key order and whitespace).
#[pyfunction]
fn validate_config(config_toml: &str) -> PyResult<String> {
    let (cfg, sweeps) = parse(config_toml)?;
    Ok(config_hash(&cfg, &sweeps))
}

/// Run a single trial and return the metric record as a JSON object
/// string. Deterministic given (seed, trial_index).
#[pyfunction]
fn run_trial_json(config_toml: &str, trial_index: u64) -> PyResult<String> {
    let (cfg, _) = parse(config_toml)?;
    let record = simulator::run_trial(&cfg, trial_index);
    serde_json::to_string(&record).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Run the configured trial batch and return `{"summary": [...],
/// "records": [...]}` as a JSON string.
#[pyfunction]
fn run_batch_json(config_toml: &str) -> PyResult<String> {
    let (cfg, _) = parse(config_toml)?;
    let result = simulator::run_batch(&cfg).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let doc = serde_json::json!({ "summary": result.summary, "records": result.records });
    serde_json::to_string(&doc).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Run the configured trial batch and return the records as CSV with the
/// fixed header used by the CLI.
#[pyfunction]
fn run_batch_csv(config_toml: &str) -> PyResult<String> {
    let (cfg, _) = parse(config_toml)?;
    let result = simulator::run_batch(&cfg).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(render_csv(&result.records))
}

/// Differential-entropy report for a bivariate angle/phase model given in
/// degrees (correlation dimensionless), as a JSON object string.
#[pyfunction]
fn entropy_report_json(
    mu_theta_deg: f64,
    mu_phi_deg: f64,
    sigma_theta_deg: f64,
    sigma_phi_deg: f64,
    rho: f64,
) -> PyResult<String> {
    let model = ModelConfig { mu_theta_deg, mu_phi_deg, sigma_theta_deg, sigma_phi_deg, rho }
        .to_radians()
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let report =
        EntropyReport::for_model(&model).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn hybeam_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(default_config_toml, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_trial_json, m)?)?;
    m.add_function(wrap_pyfunction!(run_batch_json, m)?)?;
    m.add_function(wrap_pyfunction!(run_batch_csv, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_report_json, m)?)?;
    Ok(())
}
