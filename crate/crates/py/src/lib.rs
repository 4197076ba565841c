//! Python bindings: run catalog cases, read the constants ledger and the
//! solved processes, or drive the command line in-process.

use mfbsde_core::bench::CATALOG;
use mfbsde_core::cli::{self, constants_json, run_checks, solve_case};
use mfbsde_core::config::RunConfig;
use mfbsde_core::mc::ProcessPair;
use mfbsde_core::Error;
use pyo3::exceptions::{PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Invalid { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Builds a run config from a TOML document or a catalog case name, then
/// applies the optional grid, ensemble and seed overrides.
fn config(
    case: Option<&str>,
    toml: Option<&str>,
    m: Option<usize>,
    n: Option<usize>,
    seed: Option<u64>,
) -> PyResult<RunConfig> {
    let mut cfg = match (toml, case) {
        (Some(text), _) => RunConfig::parse(text).map_err(py_err)?,
        (None, Some(name)) => {
            let cfg = RunConfig::for_case(name);
            cfg.build_case().map_err(py_err)?;
            cfg
        }
        (None, None) => return Err(PyValueError::new_err("pass either case or toml")),
    };
    if let Some(m) = m {
        cfg.grid.m = m;
    }
    if let Some(n) = n {
        cfg.ensemble.n = n;
    }
    if let Some(s) = seed {
        cfg.ensemble.seed = s;
    }
    if cfg.grid.m == 0 || cfg.ensemble.n < 2 {
        return Err(PyValueError::new_err("need m >= 1 and n >= 2"));
    }
    Ok(cfg)
}

/// Result of a global solve.
#[pyclass(frozen, module = "mfbsde")]
struct Solution {
    #[pyo3(get)]
    case: String,
    #[pyo3(get)]
    passed: bool,
    #[pyo3(get)]
    times: Vec<f64>,
    summary: Value,
    pair: ProcessPair,
}

#[pymethods]
impl Solution {
    /// `E[Y_0]` per component.
    #[getter]
    fn y0(&self) -> Vec<f64> {
        self.pair.mean_y(0).to_vec()
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize, usize) {
        (self.times.len(), self.pair.n_particles(), self.pair.n(), self.pair.d())
    }

    /// Checks, window plan, verification results and oracle errors.
    #[getter]
    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.summary)
    }

    /// Per-node empirical means, one list of length `n` per node.
    fn mean_y(&self) -> Vec<Vec<f64>> {
        self.pair.nodes().map(|k| self.pair.mean_y(k).to_vec()).collect()
    }

    /// Particle-major values of `Y` at node `k`.
    fn y_node(&self, k: usize) -> PyResult<Vec<f64>> {
        self.check_node(k)?;
        Ok(self.pair.y_node(k).to_vec())
    }

    /// Particle-major values of `Z` at node `k`, `n * d` per particle.
    fn z_node(&self, k: usize) -> PyResult<Vec<f64>> {
        self.check_node(k)?;
        Ok(self.pair.z_node(k).to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Solution(case={:?}, passed={}, y0={:?})", self.case, self.passed, self.pair.mean_y(0))
    }
}

impl Solution {
    fn check_node(&self, k: usize) -> PyResult<()> {
        if k < self.times.len() {
            Ok(())
        } else {
            Err(PyIndexError::new_err(format!("node {k} out of range 0..{}", self.times.len())))
        }
    }
}

/// Names of the benchmark cases.
#[pyfunction]
fn catalog() -> Vec<&'static str> {
    CATALOG.to_vec()
}

/// The constants ledger of a case as a dict.
#[pyfunction]
#[pyo3(signature = (case=None, toml=None))]
fn constants<'py>(py: Python<'py>, case: Option<&str>, toml: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config(case, toml, None, None, None)?;
    to_py(py, &constants_json(&cfg).map_err(py_err)?)
}

/// Runs the structural assumption checks of a case.
#[pyfunction]
#[pyo3(signature = (case=None, toml=None))]
fn check<'py>(py: Python<'py>, case: Option<&str>, toml: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config(case, toml, None, None, None)?;
    let built = cfg.build_case().map_err(py_err)?;
    let reports = run_checks(&cfg, &built).map_err(py_err)?;
    let passed = reports.iter().all(|r| r.passed);
    to_py(py, &json!({ "case": built.name, "passed": passed, "reports": reports }))
}

/// Checks and solves a case on `[0, T]`.
#[pyfunction]
#[pyo3(signature = (case=None, toml=None, m=None, n=None, seed=None))]
fn solve(
    py: Python<'_>,
    case: Option<&str>,
    toml: Option<&str>,
    m: Option<usize>,
    n: Option<usize>,
    seed: Option<u64>,
) -> PyResult<Solution> {
    let cfg = config(case, toml, m, n, seed)?;
    let outcome = py.detach(|| solve_case(&cfg)).map_err(|f| match f.error {
        Some(e) => py_err(e),
        None => PyRuntimeError::new_err(format!("{}: assumption checks failed", f.case)),
    })?;
    let summary = json!({
        "checks": outcome.checks,
        "report": outcome.report,
        "oracle": outcome.oracle,
        "contraction": outcome.contraction,
        "rows": outcome.rows,
    });
    Ok(Solution {
        case: outcome.case.name.clone(),
        passed: outcome.passed(),
        times: outcome.rows.iter().map(|r| r.t).collect(),
        summary,
        pair: outcome.pair,
    })
}

/// Runs the command line with `args` (without the program name) and returns
/// the exit code and captured standard output.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> PyResult<(i32, String)> {
    let mut buf = Vec::new();
    let code = py.detach(|| cli::run(std::iter::once("mfbsde".to_owned()).chain(args), &mut buf));
    let text = String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((code, text))
}

#[pymodule]
fn mfbsde(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Solution>()?;
    m.add_function(wrap_pyfunction!(catalog, m)?)?;
    m.add_function(wrap_pyfunction!(constants, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
