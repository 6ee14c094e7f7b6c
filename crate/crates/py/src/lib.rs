use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use btcrs_core::engine::{healing_experiment, healing_topology, run_seeds, HealingParams};
use btcrs_core::planner;
use btcrs_core::scenario::{self, Scenario};
use btcrs_core::wire;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde_json::Value;

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (v.to_string(),))
}

// Bare names of bundled scenarios work from any directory.
fn load(path: &str) -> PyResult<Scenario> {
    let loaded = match scenario::bundled(path) {
        Some(text) if !Path::new(path).exists() => scenario::parse_scenario(text),
        _ => scenario::load_scenario(path),
    };
    loaded.map_err(|e| match e {
        scenario::ScenarioError::Io { .. } => PyValueError::new_err(e.to_string()),
        _ => PyValueError::new_err(format!("{path}: {e}")),
    })
}

/// Simulates `scenario` once per seed and returns one report dict per seed.
#[pyfunction]
#[pyo3(signature = (scenario, seeds, overrides=None))]
fn run<'py>(
    py: Python<'py>,
    scenario: &str,
    seeds: Vec<u64>,
    overrides: Option<HashMap<String, String>>,
) -> PyResult<Vec<Bound<'py, PyAny>>> {
    let s = load(scenario)?;
    let mut cfg = s.config.clone();
    for (k, v) in overrides.unwrap_or_default() {
        cfg.params.set(&k, &v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    }
    let outs = py
        .detach(|| run_seeds(&s.topology, &cfg, &seeds))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    outs.iter()
        .map(|o| to_py(py, &serde_json::to_value(&o.report).expect("report serialises")))
        .collect()
}

/// Partition plan for the named target nodes.
#[pyfunction]
fn plan_partition<'py>(py: Python<'py>, scenario: &str, target: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
    let s = load(scenario)?;
    let p = target
        .iter()
        .map(|n| s.node(n).ok_or_else(|| PyValueError::new_err(format!("unknown node {n}"))))
        .collect::<PyResult<BTreeSet<_>>>()?;
    let plan = planner::plan_partition(&s.topology, &p).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &planner::plan_json(&s.topology, &plan))
}

/// Every pool-aligned target with mining power in `[lo, hi]`, cheapest first.
#[pyfunction]
fn power_partitions<'py>(py: Python<'py>, scenario: &str, lo: f64, hi: f64) -> PyResult<Vec<Bound<'py, PyAny>>> {
    let s = load(scenario)?;
    let parts =
        planner::enumerate_power_partitions(&s.topology, lo, hi).map_err(|e| PyValueError::new_err(e.to_string()))?;
    parts.iter().map(|p| to_py(py, &planner::power_partition_json(&s.topology, p))).collect()
}

/// Cross-partition connection fraction after a partition is lifted.
#[pyfunction]
#[pyo3(signature = (seed, onpath=0.0, ases=100, per_as=10))]
fn heal<'py>(py: Python<'py>, seed: u64, onpath: f64, ases: u32, per_as: u32) -> PyResult<Bound<'py, PyAny>> {
    if !(0.0..=1.0).contains(&onpath) {
        return Err(PyValueError::new_err("onpath must lie in [0, 1]"));
    }
    let t = healing_topology(ases, per_as).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let params = HealingParams { seed, ..HealingParams::default() };
    let r = py.detach(|| healing_experiment(&t, &params, onpath));
    let mut v = serde_json::to_value(&r).expect("result serialises");
    v["recovery"] = serde_json::json!(r.recovery());
    to_py(py, &v)
}

/// First four bytes of the double SHA-256 of `payload`, as hex.
#[pyfunction]
fn checksum(payload: &[u8]) -> String {
    hex::encode(wire::checksum(payload))
}

#[pymodule]
fn btcrs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(plan_partition, m)?)?;
    m.add_function(wrap_pyfunction!(power_partitions, m)?)?;
    m.add_function(wrap_pyfunction!(heal, m)?)?;
    m.add_function(wrap_pyfunction!(checksum, m)?)?;
    Ok(())
}
