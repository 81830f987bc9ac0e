//! Python bindings: tabular MDPs with exact oracles, width oracles, the
//! eluder estimator, the ring width fixture and the experiment runner.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use eniac::bench::ring::{run_ring, RingConfig};
use eniac::bench::{make_combination_lock, make_gridworld, run_experiment, RunConfig};
use eniac::mdp::{self, env_reward, exact_q_dp, exact_value_dp, optimal_q_dp, Mdp, TabularPolicy};
use eniac::rng::seeded;
use eniac::width::{self, eluder_with_oracle, EluderMode, WidthOracle};
use eniac::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::InvalidMdp(_) | Error::DimensionMismatch { .. } | Error::Unsupported(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Finite discounted MDP with a fixed start state.
#[pyclass(name = "TabularMdp", module = "eniac_py")]
struct PyTabularMdp {
    inner: mdp::TabularMdp,
}

impl PyTabularMdp {
    fn policy(&self, probs: Vec<Vec<f64>>) -> PyResult<TabularPolicy> {
        let na = self.inner.num_actions();
        if probs.len() != self.inner.num_states() || probs.iter().any(|p| p.len() != na) {
            return Err(PyValueError::new_err(format!(
                "policy must be a {} x {} table",
                self.inner.num_states(),
                na
            )));
        }
        Ok(TabularPolicy { probs })
    }
}

#[pymethods]
impl PyTabularMdp {
    /// `transitions[s][a][s']`, `rewards[s][a]` in [0, 1].
    #[new]
    #[pyo3(signature = (transitions, rewards, gamma, initial_state=0))]
    fn new(transitions: Vec<Vec<Vec<f64>>>, rewards: Vec<Vec<f64>>, gamma: f64, initial_state: usize) -> PyResult<Self> {
        Ok(Self { inner: mdp::TabularMdp::new(transitions, rewards, gamma, initial_state).map_err(py_err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (horizon=15, delta=0.01, gamma=0.97, actions=2, lock_seed=0))]
    fn combination_lock(horizon: usize, delta: f64, gamma: f64, actions: usize, lock_seed: u64) -> PyResult<Self> {
        Ok(Self { inner: make_combination_lock(horizon, delta, gamma, actions, lock_seed).map_err(py_err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (width=5, height=5, slip=0.1, gamma=0.95))]
    fn gridworld(width: usize, height: usize, slip: f64, gamma: f64) -> PyResult<Self> {
        Ok(Self { inner: make_gridworld(width, height, slip, gamma).map_err(py_err)? })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { inner: mdp::TabularMdp::from_toml(text).map_err(py_err)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn num_states(&self) -> usize {
        self.inner.num_states()
    }

    #[getter]
    fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    #[getter]
    fn start(&self) -> usize {
        self.inner.start()
    }

    /// Optimal value at the start state.
    fn optimal_value(&self) -> PyResult<f64> {
        let q = optimal_q_dp(&self.inner, &env_reward(&self.inner), 1e-10).map_err(py_err)?;
        Ok(q.v[self.inner.start()])
    }

    /// Exact value of a stationary policy at the start state.
    fn policy_value(&self, probs: Vec<Vec<f64>>) -> PyResult<f64> {
        let pi = self.policy(probs)?;
        exact_value_dp(&self.inner, &pi, &env_reward(&self.inner), self.inner.start(), 1e-10).map_err(py_err)
    }

    /// Exact action values `Q[s][a]` of a stationary policy.
    fn q_values(&self, probs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let pi = self.policy(probs)?;
        Ok(exact_q_dp(&self.inner, &pi, &env_reward(&self.inner), 1e-10).map_err(py_err)?.q)
    }

    /// Mean of `n` geometric-horizon Monte-Carlo draws of `Q(s, a)`.
    #[pyo3(signature = (probs, s, a, n, seed=0))]
    fn estimate_q(&self, py: Python<'_>, probs: Vec<Vec<f64>>, s: usize, a: usize, n: usize, seed: u64) -> PyResult<f64> {
        let pi = self.policy(probs)?;
        if s >= self.inner.num_states() || a >= self.inner.num_actions() || n == 0 {
            return Err(PyValueError::new_err("state/action out of range or n == 0"));
        }
        let m = &self.inner;
        Ok(py.detach(|| {
            let reward = env_reward(m);
            let mut rng = seeded(seed);
            (0..n).map(|_| mdp::estimate_q(m, &pi, &s, a, &reward, &mut rng)).sum::<f64>() / n as f64
        }))
    }

    fn __repr__(&self) -> String {
        format!(
            "TabularMdp(num_states={}, num_actions={}, gamma={})",
            self.inner.num_states(),
            self.inner.num_actions(),
            self.inner.gamma()
        )
    }
}

/// Exact width over an explicit list of tables `tables[k][s * A + a]`.
#[pyclass(name = "FiniteWidth", module = "eniac_py")]
struct PyFiniteWidth {
    inner: width::FiniteWidth,
    tables: Vec<Vec<f64>>,
    cells: usize,
    num_actions: usize,
}

impl PyFiniteWidth {
    fn check(&self, s: usize, a: usize) -> PyResult<()> {
        if a >= self.num_actions || s * self.num_actions + a >= self.cells {
            return Err(PyValueError::new_err(format!("({s}, {a}) outside the tables")));
        }
        Ok(())
    }
}

#[pymethods]
impl PyFiniteWidth {
    #[new]
    fn new(tables: Vec<Vec<f64>>, num_actions: usize, epsilon: f64) -> PyResult<Self> {
        let cells = tables.first().map(|t| t.len()).unwrap_or(0);
        if tables.is_empty() || num_actions == 0 || cells % num_actions != 0 || tables.iter().any(|t| t.len() != cells) {
            return Err(PyValueError::new_err("tables must be non-empty, equal length and a multiple of num_actions"));
        }
        let inner = width::FiniteWidth::new(tables.clone(), num_actions, epsilon);
        Ok(Self { inner, tables, cells, num_actions })
    }

    fn push(&mut self, s: usize, a: usize) -> PyResult<()> {
        self.check(s, a)?;
        self.inner.push(&s, a);
        Ok(())
    }

    fn width(&self, s: usize, a: usize) -> PyResult<f64> {
        self.check(s, a)?;
        Ok(self.inner.width(&s, a))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Eluder length over every `(s, a)` cell, starting from an empty dataset.
    #[pyo3(signature = (exact=true, budget=1_000_000))]
    fn eluder_dimension(&self, exact: bool, budget: usize) -> (usize, Vec<usize>, bool) {
        let fresh = width::FiniteWidth::new(self.tables.clone(), self.num_actions, self.inner.epsilon());
        let domain: Vec<(usize, usize)> =
            (0..self.cells).map(|c| (c / self.num_actions, c % self.num_actions)).collect();
        let mode = if exact { EluderMode::Exact { budget } } else { EluderMode::Greedy };
        let r = eluder_with_oracle(&fresh, &domain, mode);
        (r.length, r.sequence, r.fell_back)
    }
}

/// Certified width of a norm-bounded linear class over raw feature vectors.
#[pyclass(name = "LinearWidth", module = "eniac_py")]
struct PyLinearWidth {
    inner: width::LinearWidth<Vec<f64>>,
    dim: usize,
}

impl PyLinearWidth {
    fn check(&self, phi: &[f64]) -> PyResult<()> {
        if phi.len() != self.dim {
            return Err(PyValueError::new_err(format!("expected {} features, got {}", self.dim, phi.len())));
        }
        Ok(())
    }
}

#[pymethods]
impl PyLinearWidth {
    /// `ridge=None` picks `eps^2 / (4 B^2)`.
    #[new]
    #[pyo3(signature = (dim, bound, epsilon, ridge=None))]
    fn new(dim: usize, bound: f64, epsilon: f64, ridge: Option<f64>) -> PyResult<Self> {
        if ridge.is_some_and(|r| r < 0.0) || !(bound > 0.0) || !(epsilon >= 0.0) {
            return Err(PyValueError::new_err("need bound > 0, epsilon >= 0 and ridge >= 0"));
        }
        let features: eniac::function_class::FeatureFn<Vec<f64>> = Arc::new(|x: &Vec<f64>, _a: usize| x.clone());
        Ok(Self { inner: width::LinearWidth::new(features, dim, bound, epsilon, ridge), dim })
    }

    fn push(&mut self, phi: Vec<f64>) -> PyResult<()> {
        self.check(&phi)?;
        self.inner.push(&phi, 0);
        Ok(())
    }

    fn width(&self, phi: Vec<f64>) -> PyResult<f64> {
        self.check(&phi)?;
        Ok(self.inner.width(&phi, 0))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Experiment configuration; see `configs/*.toml`.
#[pyclass(name = "RunConfig", module = "eniac_py")]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { inner: RunConfig::from_toml(text).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: RunConfig::load(path).map_err(py_err)? })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    #[setter]
    fn set_seeds(&mut self, seeds: Vec<u64>) -> PyResult<()> {
        if seeds.is_empty() {
            return Err(PyValueError::new_err("at least one seed is required"));
        }
        self.inner.seeds = seeds;
        Ok(())
    }

    /// Run every seed, writing CSVs under `out_dir`; returns one dict per seed.
    fn run<'py>(&self, py: Python<'py>, out_dir: PathBuf) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let cfg = self.inner.clone();
        let summary = py.detach(move || run_experiment(&cfg, &out_dir)).map_err(py_err)?;
        summary
            .seeds
            .iter()
            .map(|s| {
                let d = PyDict::new(py);
                d.set_item("seed", s.seed)?;
                d.set_item("final_value", s.final_value)?;
                d.set_item("best_value", s.best_value)?;
                d.set_item("succeeded", s.succeeded)?;
                d.set_item("episodes", s.episodes)?;
                d.set_item("env_steps", s.env_steps)?;
                d.set_item("optimum", summary.optimum)?;
                Ok(d)
            })
            .collect()
    }
}

/// Train one width-network pair on the 2-D ring fixture.
#[pyfunction]
#[pyo3(signature = (seed=0, outer_iters=200))]
fn ring_width<'py>(py: Python<'py>, seed: u64, outer_iters: usize) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = RingConfig::default();
    cfg.train.outer_iters = outer_iters;
    let r = py.detach(move || run_ring(&cfg, seed, &mut |_| {})).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("far_width", r.far_width)?;
    d.set_item("center_width", r.center_width)?;
    d.set_item("buffer_width", r.buffer_width)?;
    d.set_item("far_ratio", r.far_ratio())?;
    d.set_item("f_prime_unchanged", r.f_prime_hash_before == r.f_prime_hash_after)?;
    Ok(d)
}

#[pymodule]
fn eniac_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTabularMdp>()?;
    m.add_class::<PyFiniteWidth>()?;
    m.add_class::<PyLinearWidth>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_function(wrap_pyfunction!(ring_width, m)?)?;
    Ok(())
}
