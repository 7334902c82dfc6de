//! Python bindings: instance generation, the formation dynamics, and the
//! two solvers, exposed as `hflsim_py`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::str::FromStr;

use hflsim::bandwidth::{self, CoalitionSpec, GpConfig};
use hflsim::coalition::{self, FormationConfig, PreferenceRule};
use hflsim::economics;
use hflsim::experiment::{self, ParameterRanges};
use hflsim::model::NetworkInstance;
use hflsim::stackelberg;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn coalitions_of(instance: &NetworkInstance, assignment: &[usize]) -> PyResult<Vec<Vec<usize>>> {
    if assignment.len() != instance.n_devices() {
        return Err(err("assignment length must equal the device count"));
    }
    let mut coalitions = vec![Vec::new(); instance.n_edges()];
    for (dev, &edge) in assignment.iter().enumerate() {
        if edge >= instance.n_edges() {
            return Err(err(format!("assignment references unknown edge {edge}")));
        }
        coalitions[edge].push(dev);
    }
    Ok(coalitions)
}

/// An immutable problem instance.
#[pyclass(name = "Instance", skip_from_py_object)]
#[derive(Clone)]
struct PyInstance {
    inner: NetworkInstance,
}

#[pymethods]
impl PyInstance {
    /// Sample a feasible instance from the default parameter ranges.
    #[staticmethod]
    #[pyo3(signature = (seed, devices=12, edges=4))]
    fn generate(seed: u64, devices: usize, edges: usize) -> PyResult<Self> {
        let ranges = ParameterRanges { n_devices: devices, n_edges: edges, ..Default::default() };
        Ok(Self { inner: experiment::generate_instance(&ranges, seed).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(json: &str) -> PyResult<Self> {
        Ok(Self { inner: NetworkInstance::from_json_str(json).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json_string().map_err(err)
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    #[getter]
    fn n_devices(&self) -> usize {
        self.inner.n_devices()
    }

    #[getter]
    fn n_edges(&self) -> usize {
        self.inner.n_edges()
    }

    #[getter]
    fn unit_prices(&self) -> Vec<f64> {
        self.inner.econ.unit_price.clone()
    }

    fn snr(&self, device: usize, edge: usize) -> f64 {
        self.inner.snr(device, edge)
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(devices={}, edges={}, digest='{}')",
            self.inner.n_devices(),
            self.inner.n_edges(),
            &self.inner.digest()[..12]
        )
    }
}

/// Final state of one formation run.
#[pyclass(name = "FormationResult")]
struct PyFormationResult {
    #[pyo3(get)]
    rule: String,
    #[pyo3(get)]
    assignment: Vec<usize>,
    #[pyo3(get)]
    bandwidth: Vec<f64>,
    #[pyo3(get)]
    agg_counts: Vec<u32>,
    #[pyo3(get)]
    rewards: Vec<f64>,
    #[pyo3(get)]
    total_utility: f64,
    #[pyo3(get)]
    cloud_utility: f64,
    #[pyo3(get)]
    per_edge_utility: Vec<f64>,
    #[pyo3(get)]
    per_edge_gain: Vec<f64>,
    #[pyo3(get)]
    accepted_switches: usize,
    #[pyo3(get)]
    attempts: usize,
    #[pyo3(get)]
    converged: bool,
    /// (attempt, potential) after every accepted switch.
    #[pyo3(get)]
    potential_trajectory: Vec<(usize, f64)>,
}

#[pymethods]
impl PyFormationResult {
    fn __repr__(&self) -> String {
        format!(
            "FormationResult(rule='{}', total_utility={:.3}, switches={}, converged={})",
            self.rule, self.total_utility, self.accepted_switches, self.converged
        )
    }
}

/// Run the two-level dynamics for one rule on one instance.
#[pyfunction]
#[pyo3(signature = (instance, rule, seed=0))]
fn run_formation(instance: &PyInstance, rule: &str, seed: u64) -> PyResult<PyFormationResult> {
    let rule = PreferenceRule::from_str(rule).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outcome = coalition::run_formation(
        &instance.inner,
        rule,
        &FormationConfig::default(),
        &mut rng,
        None,
    )
    .map_err(err)?;
    let total = outcome.total_utility(&instance.inner);
    let metrics =
        experiment::final_state_metrics(&instance.inner, &outcome.partition, &outcome.rewards);
    Ok(PyFormationResult {
        rule: rule.name().to_string(),
        assignment: outcome.partition.assignment().to_vec(),
        bandwidth: outcome.partition.bandwidth().to_vec(),
        agg_counts: outcome.partition.agg_counts().to_vec(),
        rewards: outcome.rewards,
        total_utility: total,
        cloud_utility: metrics.cloud_utility,
        per_edge_utility: metrics.per_edge_utility,
        per_edge_gain: metrics.per_edge_gain,
        accepted_switches: outcome.accepted_switches,
        attempts: outcome.attempts,
        converged: outcome.converged,
        potential_trajectory: outcome
            .potential_trajectory
            .iter()
            .map(|p| (p.attempt, p.potential))
            .collect(),
    })
}

/// Allocate bandwidth across the coalitions of `assignment` by projected
/// gradient ascent; returns per-edge Hz.
#[pyfunction]
fn solve_bandwidth(
    instance: &PyInstance,
    assignment: Vec<usize>,
    agg_counts: Vec<u32>,
) -> PyResult<Vec<f64>> {
    let coalitions = coalitions_of(&instance.inner, &assignment)?;
    if agg_counts.len() != instance.inner.n_edges() || agg_counts.iter().any(|&k| k < 1) {
        return Err(err("need one positive aggregation count per edge"));
    }
    let groups: Vec<CoalitionSpec<'_>> = coalitions
        .iter()
        .enumerate()
        .map(|(edge, members)| CoalitionSpec { edge, members, agg_count: agg_counts[edge] })
        .collect();
    let out = bandwidth::solve(
        &instance.inner,
        &groups,
        instance.inner.config.total_bandwidth,
        &GpConfig::default(),
        false,
    );
    Ok(out.bandwidth)
}

/// Cloud pricing walk at a fixed partition and allocation; returns
/// `(rewards, agg_counts, cloud_utility)` with `None` counts for edges
/// outside the game.
#[pyfunction]
fn solve_pricing(
    instance: &PyInstance,
    assignment: Vec<usize>,
    bandwidth: Vec<f64>,
) -> PyResult<(Vec<f64>, Vec<Option<u32>>, f64)> {
    let coalitions = coalitions_of(&instance.inner, &assignment)?;
    if bandwidth.len() != instance.inner.n_edges() {
        return Err(err("need one bandwidth entry per edge"));
    }
    let out = stackelberg::solve_pricing(&instance.inner, &coalitions, &bandwidth).map_err(err)?;
    Ok((out.rewards, out.schedule, out.cloud_utility))
}

/// Total utility of all coalitions at a full configuration.
#[pyfunction]
fn total_utility(
    instance: &PyInstance,
    assignment: Vec<usize>,
    bandwidth: Vec<f64>,
    agg_counts: Vec<u32>,
) -> PyResult<f64> {
    let coalitions = coalitions_of(&instance.inner, &assignment)?;
    if bandwidth.len() != instance.inner.n_edges() || agg_counts.len() != instance.inner.n_edges() {
        return Err(err("need one bandwidth and count entry per edge"));
    }
    Ok(economics::total_utility(&instance.inner, &coalitions, &bandwidth, &agg_counts))
}

/// Utility of a single device inside its coalition.
#[pyfunction]
fn device_utility(
    instance: &PyInstance,
    device: usize,
    assignment: Vec<usize>,
    bandwidth: Vec<f64>,
    agg_counts: Vec<u32>,
) -> PyResult<f64> {
    let coalitions = coalitions_of(&instance.inner, &assignment)?;
    if device >= instance.inner.n_devices() {
        return Err(err("unknown device"));
    }
    let edge = assignment[device];
    Ok(economics::device_utility(
        &instance.inner,
        device,
        edge,
        &coalitions[edge],
        bandwidth[edge],
        agg_counts[edge],
    ))
}

#[pymodule]
fn hflsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInstance>()?;
    m.add_class::<PyFormationResult>()?;
    m.add_function(wrap_pyfunction!(run_formation, m)?)?;
    m.add_function(wrap_pyfunction!(solve_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(solve_pricing, m)?)?;
    m.add_function(wrap_pyfunction!(total_utility, m)?)?;
    m.add_function(wrap_pyfunction!(device_utility, m)?)?;
    Ok(())
}
