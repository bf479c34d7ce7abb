//! Python bindings: simulator, grasp features, random forest, overpour fit
//! and the experiment commands.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use capflow::classify::{fit_forest, ForestConfig, JointLabel, JOINT_CLASSES};
use capflow::control::{run_pour, Brain, OraclePredictor, PourOptions};
use capflow::harness::{run_command as run_cli_command, Command, ExperimentConfig, Outputs};
use capflow::owe::{fit_owe as fit_owe_rs, stop_weight as stop_weight_rs, OverpourSample, OweCoeffs};
use capflow::signals::{self, Container, DiffStep, Substance};
use capflow::simworld::{self, AlwaysForward, Hold, Policy, PourSetup, StopAndGo};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(format!("{e:#}"))
}

fn substance(name: &str) -> PyResult<Substance> {
    name.parse().map_err(value_err)
}

fn container(name: &str) -> PyResult<Container> {
    name.parse().map_err(value_err)
}

fn command(name: &str) -> Result<Command, String> {
    [Command::ClassifySuite, Command::PourSuite, Command::TrainPwp, Command::FitOwe, Command::PourOnce, Command::SimTrial]
        .into_iter()
        .find(|c| c.name() == name)
        .ok_or_else(|| format!("unknown command `{name}`"))
}

fn policy(name: &str, seed: u64) -> Result<Box<dyn Policy>, String> {
    match name {
        "forward" => Ok(Box::new(AlwaysForward)),
        "stop_and_go" => Ok(Box::new(StopAndGo::new(seed))),
        "hold" => Ok(Box::new(Hold)),
        other => Err(format!("unknown policy `{other}` (forward, stop_and_go, hold)")),
    }
}

/// Simulator parameters; the bundled calibration by default.
#[pyclass(name = "Catalog", module = "capflow_py", from_py_object)]
#[derive(Clone)]
struct PyCatalog {
    inner: simworld::Catalog,
}

#[pymethods]
impl PyCatalog {
    #[new]
    fn new() -> Self {
        PyCatalog { inner: simworld::Catalog::default() }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyCatalog { inner: simworld::Catalog::from_toml(text).map_err(value_err)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn noise_free(&self) -> Self {
        PyCatalog { inner: self.inner.noise_free() }
    }

    fn with_min_transport_delay(&self, seconds: f64) -> Self {
        PyCatalog { inner: self.inner.with_min_transport_delay(seconds) }
    }

    fn transport_delay(&self, substance_name: &str) -> PyResult<f64> {
        Ok(self.inner.substance(substance(substance_name)?).transport_delay)
    }
}

/// Scripted open-loop pour. Returns frame times, readings per frame, the
/// scale stream and the serialized trial log.
#[pyfunction]
#[pyo3(signature = (catalog, substance_name, seed, duration=20.0, policy_name="forward", day_seed=0))]
fn simulate_pour<'py>(
    py: Python<'py>,
    catalog: &PyCatalog,
    substance_name: &str,
    seed: u64,
    duration: f64,
    policy_name: &str,
    day_seed: i64,
) -> PyResult<Bound<'py, PyDict>> {
    let setup = PourSetup { day_seed, ..PourSetup::new(substance(substance_name)?, seed) };
    let mut p = policy(policy_name, seed).map_err(value_err)?;
    let trial = simworld::run_scripted_pour(&catalog.inner, &setup, p.as_mut(), duration);
    let d = PyDict::new(py);
    d.set_item("t", trial.frames.iter().map(|f| f.t).collect::<Vec<_>>())?;
    d.set_item("readings", trial.frames.iter().map(|f| f.readings.to_vec()).collect::<Vec<_>>())?;
    d.set_item("scale_t", trial.scale.iter().map(|s| s.t).collect::<Vec<_>>())?;
    d.set_item("scale_w", trial.scale.iter().map(|s| s.weight).collect::<Vec<_>>())?;
    d.set_item("windows", signals::window_count(trial.frames.len()))?;
    d.set_item("log", signals::write_trial(&trial))?;
    Ok(d)
}

/// Closed-loop pour with the ground-truth predictor and no overpour
/// correction.
#[pyfunction]
fn oracle_pour<'py>(py: Python<'py>, catalog: &PyCatalog, substance_name: &str, seed: u64, target: f64) -> PyResult<Bound<'py, PyDict>> {
    let setup = PourSetup::new(substance(substance_name)?, seed);
    let r = run_pour(&catalog.inner, &setup, target, Brain::Model { predictor: &OraclePredictor, owe: None }, &PourOptions::default())
        .map_err(runtime_err)?;
    let d = PyDict::new(py);
    d.set_item("final_true", r.final_true)?;
    d.set_item("error", r.error)?;
    d.set_item("signed_error", r.signed_error)?;
    d.set_item("w_hat_at_retract", r.w_hat_at_retract)?;
    d.set_item("exhausted", r.exhausted)?;
    d.set_item("deltas", r.deltas)?;
    d.set_item("w_hat", r.log.iter().map(|l| l.w_hat).collect::<Vec<_>>())?;
    Ok(d)
}

/// 4000-value feature vector of one simulated grasp.
#[pyfunction]
#[pyo3(signature = (catalog, container_name, substance_name, day_seed, seed, noise_free=false))]
fn grasp_features(
    catalog: &PyCatalog,
    container_name: &str,
    substance_name: &str,
    day_seed: i64,
    seed: u64,
    noise_free: bool,
) -> PyResult<Vec<f64>> {
    let noise = if noise_free { catalog.inner.grasp.noise_free() } else { catalog.inner.grasp };
    let t = simworld::grasp_signature(&catalog.inner, container(container_name)?, substance(substance_name)?, day_seed, seed, &noise);
    Ok(signals::grasp_features(&t, DiffStep::PerIndex).map_err(value_err)?.into_vec())
}

#[pyfunction]
fn joint_label(container_name: &str, substance_name: &str) -> PyResult<usize> {
    Ok(JointLabel::new(container(container_name)?, substance(substance_name)?).joint())
}

#[pyfunction]
fn split_joint(joint: usize) -> PyResult<(String, String)> {
    let l = JointLabel::from_joint(joint).ok_or_else(|| value_err(format!("joint label {joint} outside 0..{JOINT_CLASSES}")))?;
    Ok((l.container.to_string(), l.substance.to_string()))
}

#[pyclass(name = "Forest", module = "capflow_py", from_py_object)]
#[derive(Clone)]
struct PyForest {
    inner: capflow::classify::Forest,
}

#[pymethods]
impl PyForest {
    /// Gini forest with bootstrap and sqrt(d) candidate features per split.
    #[staticmethod]
    #[pyo3(signature = (x, y, n_classes, n_trees=100, seed=0))]
    fn fit(py: Python<'_>, x: Vec<Vec<f64>>, y: Vec<usize>, n_classes: usize, n_trees: usize, seed: u64) -> PyResult<Self> {
        let cfg = ForestConfig { n_trees, seed, ..ForestConfig::default() };
        let inner = py.detach(|| fit_forest(&x, &y, n_classes, &cfg)).map_err(value_err)?;
        Ok(PyForest { inner })
    }

    fn predict(&self, features: Vec<f64>) -> PyResult<usize> {
        self.inner.predict(&features).map_err(value_err)
    }

    fn predict_proba(&self, features: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.predict_proba(&features).map_err(value_err)
    }

    fn predict_many(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        self.inner.predict_many(&x).map_err(value_err)
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.inner.trees.len()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(runtime_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyForest { inner: capflow::classify::Forest::from_json(text).map_err(value_err)? })
    }
}

/// Least-squares `(a, b, c, rmse)` of `w_over = a w^2 + b w + c`.
#[pyfunction]
fn fit_owe(w_stop: Vec<f64>, w_over: Vec<f64>) -> PyResult<(f64, f64, f64, f64)> {
    if w_stop.len() != w_over.len() {
        return Err(value_err("w_stop and w_over differ in length"));
    }
    let samples: Vec<OverpourSample> = w_stop
        .iter()
        .zip(&w_over)
        .map(|(&w, &o)| OverpourSample { substance: Substance::Water, target: w, w_stop_observed: w, w_overpoured: o })
        .collect();
    let c = fit_owe_rs(&samples).map_err(value_err)?;
    Ok((c.a, c.b, c.c, c.rmse))
}

/// Stop weight that lands on `target` once the overpour is added.
#[pyfunction]
fn stop_weight(a: f64, b: f64, c: f64, target: f64) -> PyResult<f64> {
    stop_weight_rs(&OweCoeffs { substance: Substance::Water, a, b, c, rmse: 0.0, n: 0 }, target).map_err(value_err)
}

/// Experiment configuration; `from_toml("")` is the default.
#[pyclass(name = "ExperimentConfig", module = "capflow_py", from_py_object)]
#[derive(Clone)]
struct PyExperimentConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyExperimentConfig {
    #[new]
    #[pyo3(signature = (text=""))]
    fn new(text: &str) -> PyResult<Self> {
        Ok(PyExperimentConfig { inner: ExperimentConfig::from_toml(text).map_err(runtime_err)? })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    fn hash(&self) -> PyResult<String> {
        self.inner.hash().map_err(runtime_err)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(runtime_err)
    }
}

/// Runs one CLI command (`sim-trial`, `pour-suite`, ...) into `out_dir` and
/// returns the manifest as JSON.
#[pyfunction]
fn run_command(py: Python<'_>, name: &str, config: &PyExperimentConfig, out_dir: PathBuf) -> PyResult<String> {
    let cmd = command(name).map_err(value_err)?;
    let cfg = config.inner.clone();
    let manifest = py
        .detach(move || Outputs::create(&out_dir).and_then(|mut out| run_cli_command(cmd, &cfg, &mut out)))
        .map_err(runtime_err)?;
    serde_json::to_string(&manifest).map_err(runtime_err)
}

#[pymodule]
fn capflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCatalog>()?;
    m.add_class::<PyForest>()?;
    m.add_class::<PyExperimentConfig>()?;
    m.add_function(wrap_pyfunction!(simulate_pour, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_pour, m)?)?;
    m.add_function(wrap_pyfunction!(grasp_features, m)?)?;
    m.add_function(wrap_pyfunction!(joint_label, m)?)?;
    m.add_function(wrap_pyfunction!(split_joint, m)?)?;
    m.add_function(wrap_pyfunction!(fit_owe, m)?)?;
    m.add_function(wrap_pyfunction!(stop_weight, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    m.add("JOINT_CLASSES", JOINT_CLASSES)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
