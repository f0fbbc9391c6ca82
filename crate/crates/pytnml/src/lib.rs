//! Python bindings for the tnml library: dataset synthesis, trace-ball
//! solving, excess-risk bounds, and the concentration verifiers.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use std::path::PathBuf;
use tnml::concentration::{self, OperatorSampler};
use tnml::data::{self, LossSpec, MultitaskDataset, TaskGenerator};
use tnml::linop::Matrix;
use tnml::solver::{self, SolverConfig, SolverMethod, TaskMatrix};
use tnml::{bounds, Error};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Synthetic sphere/subspace task family.
#[pyclass(name = "Generator")]
struct PyGenerator {
    inner: TaskGenerator,
}

#[pymethods]
impl PyGenerator {
    #[new]
    #[pyo3(signature = (dim, sphere_dim, subspace_dim, tasks, samples_per_task, noise=0.0, seed=0))]
    fn new(
        dim: usize,
        sphere_dim: usize,
        subspace_dim: usize,
        tasks: usize,
        samples_per_task: usize,
        noise: f64,
        seed: u64,
    ) -> PyResult<Self> {
        TaskGenerator::new(dim, sphere_dim, subspace_dim, tasks, samples_per_task, noise, seed)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    /// Draw the dataset together with its generating weight matrix.
    fn generate(&self) -> PyResult<(PyDataset, PyWeightMatrix)> {
        let (data, truth) = self.inner.generate().map_err(err)?;
        Ok((PyDataset { inner: data }, PyWeightMatrix { inner: truth }))
    }

    fn ground_truth(&self) -> PyWeightMatrix {
        PyWeightMatrix { inner: self.inner.ground_truth() }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn sphere_dim(&self) -> usize {
        self.inner.sphere_dim
    }

    #[getter]
    fn subspace_dim(&self) -> usize {
        self.inner.subspace_dim
    }

    #[getter]
    fn task_count(&self) -> usize {
        self.inner.task_count()
    }

    fn __repr__(&self) -> String {
        format!(
            "Generator(dim={}, sphere_dim={}, subspace_dim={}, tasks={}, noise={}, seed={})",
            self.inner.dim,
            self.inner.sphere_dim,
            self.inner.subspace_dim,
            self.inner.task_count(),
            self.inner.noise,
            self.inner.seed
        )
    }
}

/// A multitask dataset over a common input dimension.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: MultitaskDataset,
}

#[pymethods]
impl PyDataset {
    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn task_count(&self) -> usize {
        self.inner.task_count()
    }

    fn sizes(&self) -> Vec<usize> {
        self.inner.sizes()
    }

    fn nbar(&self) -> f64 {
        self.inner.nbar()
    }

    /// Inputs of one task as a list of rows.
    fn inputs(&self, task: usize) -> PyResult<Vec<Vec<f64>>> {
        if task >= self.inner.task_count() {
            return Err(PyValueError::new_err(format!("task {task} out of range")));
        }
        let t = self.inner.task(task);
        Ok((0..t.len()).map(|i| t.input(i).to_vec()).collect())
    }

    fn labels(&self, task: usize) -> PyResult<Vec<f64>> {
        if task >= self.inner.task_count() {
            return Err(PyValueError::new_err(format!("task {task} out of range")));
        }
        let t = self.inner.task(task);
        Ok((0..t.len()).map(|i| t.label(i)).collect())
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_csv(&path).map_err(err)
    }

    #[staticmethod]
    fn read_csv(path: PathBuf) -> PyResult<Self> {
        MultitaskDataset::read_csv(&path).map(|inner| Self { inner }).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(dim={}, tasks={}, samples={})",
            self.inner.dim(),
            self.inner.task_count(),
            self.inner.total_samples()
        )
    }
}

/// A `d x T` weight matrix whose column `t` predicts task `t`.
#[pyclass(name = "WeightMatrix")]
struct PyWeightMatrix {
    inner: TaskMatrix,
}

#[pymethods]
impl PyWeightMatrix {
    /// Build from a list of per-task columns.
    #[staticmethod]
    fn from_columns(columns: Vec<Vec<f64>>) -> PyResult<Self> {
        if columns.is_empty() || columns[0].is_empty() {
            return Err(PyValueError::new_err("need at least one nonempty column"));
        }
        let dim = columns[0].len();
        if columns.iter().any(|c| c.len() != dim) {
            return Err(PyValueError::new_err("columns must share one length"));
        }
        let mut m = Matrix::zeros(dim, columns.len());
        for (t, col) in columns.iter().enumerate() {
            m.set_column(t, col);
        }
        Ok(Self { inner: TaskMatrix::new(m) })
    }

    #[staticmethod]
    fn zeros(dim: usize, tasks: usize) -> Self {
        Self { inner: TaskMatrix::zeros(dim, tasks) }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn task_count(&self) -> usize {
        self.inner.task_count()
    }

    fn column(&self, task: usize) -> PyResult<Vec<f64>> {
        if task >= self.inner.task_count() {
            return Err(PyValueError::new_err(format!("task {task} out of range")));
        }
        Ok(self.inner.column(task))
    }

    fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.inner.task_count()).map(|t| self.inner.column(t)).collect()
    }

    fn predict(&self, task: usize, x: Vec<f64>) -> PyResult<f64> {
        if task >= self.inner.task_count() {
            return Err(PyValueError::new_err(format!("task {task} out of range")));
        }
        if x.len() != self.inner.dim() {
            return Err(PyValueError::new_err("input dimension mismatch"));
        }
        Ok(self.inner.predict(task, &x))
    }

    fn trace_norm(&self) -> PyResult<f64> {
        tnml::linop::trace_norm(self.inner.matrix()).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("WeightMatrix(dim={}, tasks={})", self.inner.dim(), self.inner.task_count())
    }
}

/// A `[0, 1]`-valued loss, Lipschitz in its first argument.
#[pyclass(name = "Loss")]
struct PyLoss {
    inner: LossSpec,
}

#[pymethods]
impl PyLoss {
    #[staticmethod]
    fn clipped_absolute() -> Self {
        Self { inner: LossSpec::clipped_absolute() }
    }

    #[staticmethod]
    fn clipped_squared() -> Self {
        Self { inner: LossSpec::clipped_squared() }
    }

    #[getter]
    fn lipschitz(&self) -> f64 {
        self.inner.lipschitz()
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn eval(&self, yhat: f64, y: f64) -> f64 {
        self.inner.eval(yhat, y)
    }

    fn __repr__(&self) -> String {
        format!("Loss({})", self.inner.name())
    }
}

/// Itemized excess-risk bound.
#[pyclass(name = "BoundReport")]
struct PyBoundReport {
    inner: bounds::BoundReport,
}

#[pymethods]
impl PyBoundReport {
    #[getter]
    fn covariance_term(&self) -> f64 {
        self.inner.covariance_term
    }

    #[getter]
    fn log_term(&self) -> f64 {
        self.inner.log_term
    }

    #[getter]
    fn confidence_term(&self) -> f64 {
        self.inner.confidence_term
    }

    #[getter]
    fn total(&self) -> f64 {
        self.inner.total
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!(
            "BoundReport(total={}, covariance={}, log={}, confidence={})",
            self.inner.total, self.inner.covariance_term, self.inner.log_term, self.inner.confidence_term
        )
    }
}

/// Outcome of a solver run.
#[pyclass(name = "FitResult")]
struct PyFitResult {
    #[pyo3(get)]
    objective: f64,
    #[pyo3(get)]
    certified_gap: f64,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    nonsmooth_warning: bool,
    weights: TaskMatrix,
}

#[pymethods]
impl PyFitResult {
    #[getter]
    fn weights(&self) -> PyWeightMatrix {
        PyWeightMatrix { inner: self.weights.clone() }
    }

    fn __repr__(&self) -> String {
        format!(
            "FitResult(objective={}, certified_gap={}, iterations={})",
            self.objective, self.certified_gap, self.iterations
        )
    }
}

fn solver_config(max_iters: usize, step_scale: f64, tolerance: f64, method: &str, seed: u64) -> PyResult<SolverConfig> {
    Ok(SolverConfig {
        method: SolverMethod::parse(method).map_err(err)?,
        max_iters,
        step_scale,
        tolerance,
        seed,
    })
}

/// Minimize empirical risk over the weighted trace-norm ball of budget `b`.
#[pyfunction]
#[pyo3(signature = (dataset, loss, b, max_iters=2000, step_scale=1.0, tolerance=0.0, method="projected-subgradient", seed=0))]
#[allow(clippy::too_many_arguments)]
fn solve_trace_ball(
    dataset: &PyDataset,
    loss: &PyLoss,
    b: f64,
    max_iters: usize,
    step_scale: f64,
    tolerance: f64,
    method: &str,
    seed: u64,
) -> PyResult<PyFitResult> {
    let cfg = solver_config(max_iters, step_scale, tolerance, method, seed)?;
    let fit = solver::solve_trace_ball(&dataset.inner, &loss.inner, b, &cfg).map_err(err)?;
    Ok(PyFitResult {
        objective: fit.objective,
        certified_gap: fit.certified_gap,
        iterations: fit.iterations,
        nonsmooth_warning: fit.nonsmooth_warning,
        weights: fit.weights,
    })
}

/// Per-task baseline under a Euclidean norm constraint.
#[pyfunction]
#[pyo3(signature = (dataset, loss, radius, max_iters=2000, step_scale=1.0, tolerance=0.0, seed=0))]
fn solve_independent(
    dataset: &PyDataset,
    loss: &PyLoss,
    radius: f64,
    max_iters: usize,
    step_scale: f64,
    tolerance: f64,
    seed: u64,
) -> PyResult<PyFitResult> {
    let cfg = solver_config(max_iters, step_scale, tolerance, "projected-subgradient", seed)?;
    let fit = solver::solve_independent(&dataset.inner, &loss.inner, radius, &cfg).map_err(err)?;
    Ok(PyFitResult {
        objective: fit.objective,
        certified_gap: fit.certified_gap,
        iterations: fit.iterations,
        nonsmooth_warning: fit.nonsmooth_warning,
        weights: fit.weights,
    })
}

/// Task-averaged empirical risk of `weights` on `dataset`.
#[pyfunction]
fn empirical_risk(weights: &PyWeightMatrix, dataset: &PyDataset, loss: &PyLoss) -> PyResult<f64> {
    data::empirical_risk(&weights.inner, &dataset.inner, &loss.inner).map_err(err)
}

/// Monte Carlo population risk; returns `(mean, stderr)`.
#[pyfunction]
#[pyo3(signature = (weights, generator, loss, samples, seed=0))]
fn population_risk(
    weights: &PyWeightMatrix,
    generator: &PyGenerator,
    loss: &PyLoss,
    samples: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let est = data::population_risk(&weights.inner, &generator.inner, &loss.inner, samples, seed)
        .map_err(err)?;
    Ok((est.mean, est.stderr))
}

/// Spectral norm of the task-averaged empirical covariance.
#[pyfunction]
fn empirical_covariance_norm(dataset: &PyDataset) -> PyResult<f64> {
    Ok(bounds::empirical_covariance(&dataset.inner).map_err(err)?.spectral_norm())
}

/// Spectral norm of the generator's population covariance (`1 / sphere_dim`).
#[pyfunction]
fn analytic_covariance_norm(generator: &PyGenerator) -> PyResult<f64> {
    Ok(bounds::analytic_covariance(&generator.inner).map_err(err)?.spectral_norm())
}

/// Distribution-dependent excess-risk bound.
#[pyfunction]
fn distribution_bound(
    lipschitz: f64,
    b: f64,
    nbar: f64,
    tasks: usize,
    delta: f64,
    cov_norm: f64,
) -> PyResult<PyBoundReport> {
    bounds::distribution_bound(lipschitz, b, nbar, tasks, delta, cov_norm)
        .map(|inner| PyBoundReport { inner })
        .map_err(err)
}

/// Data-dependent excess-risk bound.
#[pyfunction]
fn empirical_bound(
    lipschitz: f64,
    b: f64,
    nbar: f64,
    tasks: usize,
    delta: f64,
    cov_norm: f64,
) -> PyResult<PyBoundReport> {
    bounds::empirical_bound(lipschitz, b, nbar, tasks, delta, cov_norm)
        .map(|inner| PyBoundReport { inner })
        .map_err(err)
}

/// Many-task limit `2 L sqrt(K / (nbar M))` for the sphere/subspace family.
#[pyfunction]
fn subspace_limit_bound(lipschitz: f64, subspace_dim: usize, nbar: f64, sphere_dim: usize) -> f64 {
    bounds::subspace_limit_bound(lipschitz, subspace_dim, nbar, sphere_dim)
}

/// Optimal conjugate exponents for `sqrt(p a + q b)`; returns `(p, q, value)`.
#[pyfunction]
fn conjugate_optimum(a: f64, b: f64) -> PyResult<(f64, f64, f64)> {
    concentration::conjugate_optimum(a, b).map_err(err)
}

/// PSD gap of the exact moment check `E[(Q_V)^m] <= m!(2nb^2)^{m-1} E[Q_V]`.
#[pyfunction]
fn moment_gap(vectors: Vec<Vec<f64>>, m: u32) -> PyResult<f64> {
    Ok(concentration::moment_oracle(&vectors, m).map_err(err)?.gap)
}

/// Rademacher-complexity chain over a dataset; returns a dict-like tuple
/// `(estimate, stderr, rhs, identity_pass, bound_pass)`.
#[pyfunction]
#[pyo3(signature = (dataset, b, lipschitz, draws=200, seed=0))]
fn rademacher_chain(
    dataset: &PyDataset,
    b: f64,
    lipschitz: f64,
    draws: usize,
    seed: u64,
) -> PyResult<(f64, f64, f64, bool, bool)> {
    let report = concentration::rademacher_chain(&dataset.inner, b, lipschitz, draws, seed)
        .map_err(err)?;
    Ok((
        report.estimate,
        report.stderr,
        report.rhs,
        report.identity_pass,
        report.bound_pass,
    ))
}

/// Monte Carlo check of the subexponential tail bound on the dataset's
/// rank-one Rademacher family.
#[pyfunction]
#[pyo3(signature = (dataset, p=2.0, trials=10000, seed=0))]
fn subexponential_tail_pass(dataset: &PyDataset, p: f64, trials: usize, seed: u64) -> PyResult<bool> {
    let sampler = OperatorSampler::rademacher_rank_one(&dataset.inner).map_err(err)?;
    let r = sampler
        .subexponential_scale()
        .ok_or_else(|| PyValueError::new_err("sampler has no moment scale"))?;
    let q = p / (p - 1.0);
    let grid = concentration::default_s_grid(q * r * (dataset.inner.dim() as f64).ln().max(1.0));
    let report = concentration::verify_subexponential_tail(
        &sampler,
        dataset.inner.dim(),
        r,
        p,
        &grid,
        trials,
        seed,
    )
    .map_err(err)?;
    Ok(report.pass)
}

/// Monte Carlo check of the tail and expectation bounds for independent
/// rank-one sphere projections.
#[pyfunction]
#[pyo3(signature = (dim, count, p=2.0, trials=10000, seed=0))]
fn projection_tails_pass(dim: usize, count: usize, p: f64, trials: usize, seed: u64) -> PyResult<bool> {
    let sampler = OperatorSampler::BoundedPsd { dim, count };
    let report = concentration::verify_oliveira(&sampler, count, p, None, trials, seed).map_err(err)?;
    Ok(report.pass)
}

#[pymodule]
fn pytnml(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGenerator>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyWeightMatrix>()?;
    m.add_class::<PyLoss>()?;
    m.add_class::<PyBoundReport>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(solve_trace_ball, m)?)?;
    m.add_function(wrap_pyfunction!(solve_independent, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_risk, m)?)?;
    m.add_function(wrap_pyfunction!(population_risk, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_covariance_norm, m)?)?;
    m.add_function(wrap_pyfunction!(analytic_covariance_norm, m)?)?;
    m.add_function(wrap_pyfunction!(distribution_bound, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_bound, m)?)?;
    m.add_function(wrap_pyfunction!(subspace_limit_bound, m)?)?;
    m.add_function(wrap_pyfunction!(conjugate_optimum, m)?)?;
    m.add_function(wrap_pyfunction!(moment_gap, m)?)?;
    m.add_function(wrap_pyfunction!(rademacher_chain, m)?)?;
    m.add_function(wrap_pyfunction!(subexponential_tail_pass, m)?)?;
    m.add_function(wrap_pyfunction!(projection_tails_pass, m)?)?;
    Ok(())
}
