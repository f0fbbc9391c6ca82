//! Covariance operators and closed-form excess-risk bound evaluators.
//!
//! With the average sample size written `nbar`, the two main bounds are
//!
//! ```text
//! 2 L B ( sqrt(||C||/nbar)   + 5 sqrt((ln(nbar T) + 1)/(nbar T)) )   + sqrt(2 ln(2/delta)/(nbar T))
//! 2 L B ( sqrt(||Chat||/nbar) + sqrt(2 (ln(nbar T) + 1)/(nbar T)) ) + sqrt(8 ln(3/delta)/(nbar T))
//! ```
//!
//! the first driven by the population covariance, the second by the empirical
//! one. Equal sample sizes reduce `nbar` to the common `n`. The comparison
//! bounds from the per-observation covariance approach are provided as
//! constant-free diagnostics.

use crate::data::{MultitaskDataset, TaskGenerator};
use crate::error::{Error, Result};
use crate::linop::PsdOperator;
use serde::{Deserialize, Serialize};

/// How a covariance estimate was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Empirical,
    Analytic,
}

/// A task-averaged, uncentered covariance operator with its provenance.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    operator: PsdOperator,
    provenance: Provenance,
    sample_count: usize,
}

impl CovarianceEstimate {
    pub fn operator(&self) -> &PsdOperator {
        &self.operator
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn spectral_norm(&self) -> f64 {
        self.operator.spectral_norm()
    }
}

/// `Chat = (1/T) sum_t (1/n_t) sum_i x x^T`; trace equals the task-averaged
/// mean squared input norm, hence at most 1.
pub fn empirical_covariance(data: &MultitaskDataset) -> Result<CovarianceEstimate> {
    let dim = data.dim();
    let t_count = data.task_count() as f64;
    let mut op = PsdOperator::zeros(dim);
    for task in data.tasks() {
        let coeff = 1.0 / (t_count * task.len() as f64);
        for i in 0..task.len() {
            op.add_scaled_rank_one(coeff, task.input(i));
        }
    }
    Ok(CovarianceEstimate {
        operator: op,
        provenance: Provenance::Empirical,
        sample_count: data.total_samples(),
    })
}

/// Population covariance of the sphere generator: `(1/M) P_M` with `P_M` the
/// projection onto the first `M` coordinates; spectral norm exactly `1/M`.
pub fn analytic_covariance(gen: &TaskGenerator) -> Result<CovarianceEstimate> {
    gen.validate()?;
    let m = gen.sphere_dim;
    let mut data = vec![0.0; gen.dim * gen.dim];
    for i in 0..m {
        data[i * gen.dim + i] = 1.0 / m as f64;
    }
    Ok(CovarianceEstimate {
        operator: PsdOperator::new(gen.dim, data)?,
        provenance: Provenance::Analytic,
        sample_count: 0,
    })
}

/// Inputs echoed into every bound report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub lipschitz: f64,
    pub b: f64,
    pub nbar: f64,
    pub tasks: usize,
    pub delta: f64,
    pub cov_norm: f64,
}

/// Itemized bound: covariance term + log term + confidence term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub covariance_term: f64,
    pub log_term: f64,
    pub confidence_term: f64,
    pub total: f64,
    pub inputs: BoundInputs,
}

impl BoundReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bound report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse {
            path: "<bound report>".into(),
            line: 0,
            message: e.to_string(),
        })
    }
}

fn check_bound_args(lipschitz: f64, b: f64, nbar: f64, tasks: usize, delta: f64, cov_norm: f64) -> Result<()> {
    let positive = |x: f64| x.is_finite() && x > 0.0;
    if !positive(delta) || delta >= 1.0 {
        return Err(Error::InvalidConfig(format!("delta must be in (0, 1), got {delta}")));
    }
    if !positive(lipschitz) || !positive(b) || !positive(nbar) || tasks == 0 {
        return Err(Error::InvalidConfig("bound arguments must be positive".into()));
    }
    if !cov_norm.is_finite() || cov_norm < 0.0 {
        return Err(Error::InvalidConfig("covariance norm must be a nonnegative real".into()));
    }
    Ok(())
}

/// Distribution-dependent excess-risk bound, driven by the population
/// covariance norm.
pub fn distribution_bound(
    lipschitz: f64,
    b: f64,
    nbar: f64,
    tasks: usize,
    delta: f64,
    cov_norm: f64,
) -> Result<BoundReport> {
    check_bound_args(lipschitz, b, nbar, tasks, delta, cov_norm)?;
    let nt = nbar * tasks as f64;
    let front = 2.0 * lipschitz * b;
    let covariance_term = front * (cov_norm / nbar).sqrt();
    let log_term = front * 5.0 * ((nt.ln() + 1.0) / nt).sqrt();
    let confidence_term = (2.0 * (2.0 / delta).ln() / nt).sqrt();
    Ok(BoundReport {
        covariance_term,
        log_term,
        confidence_term,
        total: covariance_term + log_term + confidence_term,
        inputs: BoundInputs { lipschitz, b, nbar, tasks, delta, cov_norm },
    })
}

/// Data-dependent excess-risk bound, driven by the empirical covariance norm.
pub fn empirical_bound(
    lipschitz: f64,
    b: f64,
    nbar: f64,
    tasks: usize,
    delta: f64,
    cov_norm: f64,
) -> Result<BoundReport> {
    check_bound_args(lipschitz, b, nbar, tasks, delta, cov_norm)?;
    let nt = nbar * tasks as f64;
    let front = 2.0 * lipschitz * b;
    let covariance_term = front * (cov_norm / nbar).sqrt();
    let log_term = front * (2.0 * (nt.ln() + 1.0) / nt).sqrt();
    let confidence_term = (8.0 * (3.0 / delta).ln() / nt).sqrt();
    Ok(BoundReport {
        covariance_term,
        log_term,
        confidence_term,
        total: covariance_term + log_term + confidence_term,
        inputs: BoundInputs { lipschitz, b, nbar, tasks, delta, cov_norm },
    })
}

/// Many-task limit for the sphere/subspace family: `2 L sqrt(K / (nbar M))`.
pub fn subspace_limit_bound(lipschitz: f64, subspace_dim: usize, nbar: f64, sphere_dim: usize) -> f64 {
    2.0 * lipschitz * (subspace_dim as f64 / (nbar * sphere_dim as f64)).sqrt()
}

/// Which comparison diagnostic to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComparisonVariant {
    /// `L B sqrt(max_i ||Chat_i|| ln(min(T, d)) / n)`; needs equal sample
    /// sizes and the per-observation covariance norm.
    PerObservation,
    /// `L B sqrt(ln(min(T, d))) (sqrt(||C||/n) + sqrt((6 ln(24 n T^2) + 1)/(n T)))`.
    Distribution,
}

/// Evaluates the selected comparison bound as printed. These are
/// constant-free diagnostics for shape comparisons, not certified bounds.
pub fn comparison_bound(
    lipschitz: f64,
    b: f64,
    n: f64,
    tasks: usize,
    dim: usize,
    cov_norm: f64,
    variant: ComparisonVariant,
) -> f64 {
    let t = tasks as f64;
    let log_min = (t.min(dim as f64)).ln();
    match variant {
        ComparisonVariant::PerObservation => lipschitz * b * (cov_norm * log_min / n).sqrt(),
        ComparisonVariant::Distribution => {
            lipschitz
                * b
                * log_min.sqrt()
                * ((cov_norm / n).sqrt() + ((6.0 * (24.0 * n * t * t).ln() + 1.0) / (n * t)).sqrt())
        }
    }
}

/// Covariance of the `i`-th observation across tasks,
/// `(1/T) sum_t x_i^t (x_i^t)^T`; requires equal per-task sample sizes.
pub fn per_observation_covariance(data: &MultitaskDataset, i: usize) -> Result<PsdOperator> {
    let sizes = data.sizes();
    let n = sizes[0];
    if sizes.iter().any(|&s| s != n) {
        return Err(Error::Unsupported(
            "per-observation covariance requires equal per-task sample sizes".into(),
        ));
    }
    if i >= n {
        return Err(Error::InvalidConfig(format!("observation index {i} out of range {n}")));
    }
    let mut op = PsdOperator::zeros(data.dim());
    let coeff = 1.0 / data.task_count() as f64;
    for task in data.tasks() {
        op.add_scaled_rank_one(coeff, task.input(i));
    }
    Ok(op)
}

/// `max_i ||Chat_i||` over observation indices, the driver of the
/// per-observation comparison bound.
pub fn max_observation_covariance_norm(data: &MultitaskDataset) -> Result<f64> {
    let sizes = data.sizes();
    let n = sizes[0];
    if sizes.iter().any(|&s| s != n) {
        return Err(Error::Unsupported(
            "per-observation covariance requires equal per-task sample sizes".into(),
        ));
    }
    let mut best: f64 = 0.0;
    for i in 0..n {
        best = best.max(per_observation_covariance(data, i)?.spectral_norm());
    }
    Ok(best)
}
