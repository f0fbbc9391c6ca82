//! Empirical risk minimization over the weighted trace-norm ball
//! `{W : ||S W||_1 <= B sqrt(T)}`, plus a per-task baseline constrained only
//! in Euclidean norm.

use crate::data::{LossSpec, MultitaskDataset};
use crate::error::{Error, Result};
use crate::linop::{self, Matrix};

/// Linear predictor per task: a `d x T` matrix whose column `t` is the weight
/// vector of task `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMatrix(Matrix);

impl TaskMatrix {
    pub fn new(matrix: Matrix) -> Self {
        Self(matrix)
    }

    pub fn zeros(dim: usize, task_count: usize) -> Self {
        Self(Matrix::zeros(dim, task_count))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn task_count(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// `<w_t, x>`.
    pub fn predict(&self, t: usize, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let mut acc = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            acc += self.0.get(i, t) * xi;
        }
        acc
    }

    pub fn column(&self, t: usize) -> Vec<f64> {
        self.0.column(t)
    }

    /// Columns scaled by the per-task weights (the matrix of `s_t w_t`).
    pub fn scaled_by(&self, weights: &TaskWeights) -> Matrix {
        scale_columns(&self.0, weights.entries())
    }
}

/// Diagonal task weights `s_t = sqrt(nbar / n_t)` compensating unequal
/// per-task sample sizes; equal sizes give the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskWeights {
    entries: Vec<f64>,
}

impl TaskWeights {
    pub fn identity(task_count: usize) -> Self {
        Self { entries: vec![1.0; task_count] }
    }

    /// `s_t = sqrt((1/(n_t T)) sum_r n_r)`.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Empty("task weights need at least one task"));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidConfig("sample sizes must be positive".into()));
        }
        let nbar = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
        Ok(Self {
            entries: sizes.iter().map(|&n| (nbar / n as f64).sqrt()).collect(),
        })
    }

    pub fn task_count(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, t: usize) -> f64 {
        self.entries[t]
    }

    pub fn inverse_entries(&self) -> Vec<f64> {
        self.entries.iter().map(|s| 1.0 / s).collect()
    }
}

fn scale_columns(m: &Matrix, scales: &[f64]) -> Matrix {
    debug_assert_eq!(m.cols(), scales.len());
    Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) * scales[j])
}

/// Euclidean projection of a nonnegative vector onto
/// `{u >= 0 : sum u <= radius}`. Already-feasible inputs pass through.
pub fn l1_ball_project(v: &[f64], radius: f64) -> Vec<f64> {
    debug_assert!(radius > 0.0);
    let total: f64 = v.iter().sum();
    if total <= radius {
        return v.to_vec();
    }
    // Project onto the simplex {u >= 0, sum u = radius}: soft-threshold at the
    // KKT level theta.
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &val) in sorted.iter().enumerate() {
        cumsum += val;
        let candidate = (cumsum - radius) / (j + 1) as f64;
        if val - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Weighted trace norm `||S W||_1`.
pub fn weighted_trace_norm(w: &TaskMatrix, weights: &TaskWeights) -> Result<f64> {
    linop::trace_norm(&w.scaled_by(weights))
}

/// Projection onto `{W : ||S W||_1 <= radius}` in the `S`-weighted Frobenius
/// metric: SVD of `S W`, simplex projection of the singular values,
/// reassembly, then the inverse weighting.
pub fn project_trace_ball(w: &TaskMatrix, weights: &TaskWeights, radius: f64) -> Result<TaskMatrix> {
    if radius <= 0.0 {
        return Err(Error::InvalidConfig("projection radius must be positive".into()));
    }
    if w.task_count() != weights.task_count() {
        return Err(Error::DimensionMismatch {
            expected: weights.task_count(),
            got: w.task_count(),
        });
    }
    let scaled = w.scaled_by(weights);
    let dec = linop::svd(&scaled)?;
    let total: f64 = dec.sigma.iter().sum();
    if total <= radius {
        return Ok(w.clone());
    }
    let shrunk = l1_ball_project(&dec.sigma, radius);
    let mut rebuilt = Matrix::zeros(scaled.rows(), scaled.cols());
    for (k, &s) in shrunk.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        rebuilt.axpy(s, &Matrix::outer(&dec.u.column(k), &dec.v.column(k)));
    }
    Ok(TaskMatrix::new(scale_columns(&rebuilt, &weights.inverse_entries())))
}

/// Linear minimization oracle output.
#[derive(Debug, Clone)]
pub struct LmoResult {
    pub vertex: TaskMatrix,
    /// Set when the gradient was zero and the returned vertex is arbitrary.
    pub degenerate: bool,
}

/// Minimizer of `tr(W^T G)` over `{||S W||_1 <= radius}`: the rank-one vertex
/// `-radius * u v^T` (inversely weighted), built from the top singular triplet
/// of the inversely weighted gradient. The attained value is
/// `-radius * ||S^{-1} G||_inf`.
pub fn lmo_trace_ball(gradient: &Matrix, weights: &TaskWeights, radius: f64) -> Result<LmoResult> {
    if radius <= 0.0 {
        return Err(Error::InvalidConfig("oracle radius must be positive".into()));
    }
    if gradient.cols() != weights.task_count() {
        return Err(Error::DimensionMismatch {
            expected: weights.task_count(),
            got: gradient.cols(),
        });
    }
    let inv = weights.inverse_entries();
    let scaled = scale_columns(gradient, &inv);
    if scaled.data().iter().all(|&x| x == 0.0) {
        return Ok(LmoResult {
            vertex: TaskMatrix::zeros(gradient.rows(), gradient.cols()),
            degenerate: true,
        });
    }
    let triplet = linop::top_singular_triplet(&scaled)?;
    let outer = Matrix::outer(&triplet.u, &triplet.v);
    let vertex = scale_columns(&outer, &inv).scale(-radius);
    Ok(LmoResult { vertex: TaskMatrix::new(vertex), degenerate: false })
}

/// Optimization method for the trace-ball problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMethod {
    /// Projected subgradient with `step_scale / sqrt(k)` steps and
    /// best-iterate tracking; handles the nonsmooth clipped losses.
    ProjectedSubgradient,
    /// Frank-Wolfe; intended for the smooth interior regime of the clipped
    /// squared loss. Runs with a warning flag on nonsmooth losses.
    FrankWolfe,
}

impl SolverMethod {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "projected-subgradient" => Ok(Self::ProjectedSubgradient),
            "frank-wolfe" => Ok(Self::FrankWolfe),
            other => Err(Error::InvalidConfig(format!("unknown solver method: {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::ProjectedSubgradient => "projected-subgradient",
            Self::FrankWolfe => "frank-wolfe",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub max_iters: usize,
    pub step_scale: f64,
    /// Relative best-objective change over a 20-iteration window below which
    /// the solve stops early. Zero disables early stopping.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::ProjectedSubgradient,
            max_iters: 2000,
            step_scale: 1.0,
            tolerance: 1e-9,
            seed: 0,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::InvalidConfig("tolerance must be nonnegative".into()));
        }
        if self.step_scale.is_nan() || self.step_scale <= 0.0 {
            return Err(Error::InvalidConfig("step_scale must be positive".into()));
        }
        Ok(())
    }
}

/// One iteration record: current objective, weighted trace norm of the
/// iterate, and the linearized optimality gap at the iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub trace_norm: f64,
    pub gap: f64,
}

/// Writes the `iter,objective,trace_norm,gap` trace format.
pub fn write_trace_csv(rows: &[TraceRow], path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iter,objective,trace_norm,gap")?;
    for r in rows {
        writeln!(f, "{},{},{},{}", r.iter, r.objective, r.trace_norm, r.gap)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Best iterate found.
    pub weights: TaskMatrix,
    /// Empirical risk of the best iterate.
    pub objective: f64,
    /// Bound on `objective - min`, from the best subgradient lower bound seen.
    /// Exact for convex objectives; for the clipped losses it is a reported
    /// diagnostic, valid while the clips stay inactive.
    pub certified_gap: f64,
    pub trace: Vec<TraceRow>,
    pub iterations: usize,
    /// Frank-Wolfe was asked to run on a nonsmooth loss.
    pub nonsmooth_warning: bool,
}

/// Empirical risk and its (sub)gradient with respect to the task matrix.
fn risk_and_subgradient(
    w: &TaskMatrix,
    data: &MultitaskDataset,
    loss: &LossSpec,
) -> (f64, Matrix) {
    let t_count = data.task_count();
    let mut grad = Matrix::zeros(w.dim(), t_count);
    let mut risk = 0.0;
    for (t, task) in data.tasks().iter().enumerate() {
        let n = task.len() as f64;
        let coeff = 1.0 / (t_count as f64 * n);
        let mut task_risk = 0.0;
        for i in 0..task.len() {
            let x = task.input(i);
            let yhat = w.predict(t, x);
            let y = task.label(i);
            task_risk += loss.eval(yhat, y);
            let g = loss.subgradient(yhat, y);
            if g != 0.0 {
                for (row, &xv) in x.iter().enumerate() {
                    let cur = grad.get(row, t);
                    grad.set(row, t, cur + coeff * g * xv);
                }
            }
        }
        risk += task_risk / n;
    }
    (risk / t_count as f64, grad)
}

/// Linearized gap at `w`: `max_{w' in ball} <grad, w - w'>`, a certificate of
/// optimality distance for convex objectives.
fn linearized_gap(
    w: &TaskMatrix,
    grad: &Matrix,
    weights: &TaskWeights,
    radius: f64,
) -> Result<f64> {
    let inv = weights.inverse_entries();
    let scaled = scale_columns(grad, &inv);
    let dual_norm = if scaled.data().iter().all(|&x| x == 0.0) {
        0.0
    } else {
        linop::spectral_norm(&scaled)?
    };
    Ok(w.matrix().frobenius_dot(grad)? + radius * dual_norm)
}

struct BestTracker {
    objective: f64,
    weights: TaskMatrix,
    /// Highest lower bound `f(w_k) - gap_k` seen so far.
    lower_bound: f64,
}

impl BestTracker {
    fn new(w: &TaskMatrix) -> Self {
        Self {
            objective: f64::INFINITY,
            weights: w.clone(),
            lower_bound: f64::NEG_INFINITY,
        }
    }

    fn observe(&mut self, w: &TaskMatrix, objective: f64, gap: f64) {
        if objective < self.objective {
            self.objective = objective;
            self.weights = w.clone();
        }
        let lb = objective - gap;
        if lb > self.lower_bound {
            self.lower_bound = lb;
        }
    }

    fn certified_gap(&self) -> f64 {
        (self.objective - self.lower_bound).max(0.0)
    }
}

/// Window length of the relative-change stopping rule.
const STOP_WINDOW: usize = 20;

fn should_stop(history: &[f64], tolerance: f64) -> bool {
    if tolerance <= 0.0 || history.len() <= STOP_WINDOW {
        return false;
    }
    let now = history[history.len() - 1];
    let then = history[history.len() - 1 - STOP_WINDOW];
    (then - now).abs() < tolerance * then.abs().max(1e-12)
}

/// Minimizes the empirical risk over `{W : ||S W||_1 <= B sqrt(T)}` with the
/// task weights implied by the per-task sample sizes.
///
/// Returns an approximate minimizer together with its achieved objective and
/// a certified optimality gap, so downstream bound checks can use the risk as
/// computed rather than an idealized optimum.
pub fn solve_trace_ball(
    data: &MultitaskDataset,
    loss: &LossSpec,
    b: f64,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    if b.is_nan() || b <= 0.0 {
        return Err(Error::InvalidConfig("regularization constant B must be positive".into()));
    }
    cfg.validate()?;
    let weights = TaskWeights::from_sizes(&data.sizes())?;
    let radius = b * (data.task_count() as f64).sqrt();
    let nonsmooth_warning = cfg.method == SolverMethod::FrankWolfe
        && matches!(loss.kind(), crate::data::LossKind::ClippedAbsolute);

    let mut w = TaskMatrix::zeros(data.dim(), data.task_count());
    let mut best = BestTracker::new(&w);
    let mut trace = Vec::with_capacity(cfg.max_iters.min(4096));
    let mut best_history = Vec::with_capacity(cfg.max_iters);
    let mut iterations = 0;

    for k in 0..cfg.max_iters {
        if !w.matrix().all_finite() {
            return Err(Error::NumericalFailure { iteration: k });
        }
        let (objective, grad) = risk_and_subgradient(&w, data, loss);
        if !objective.is_finite() {
            return Err(Error::NumericalFailure { iteration: k });
        }
        let gap = linearized_gap(&w, &grad, &weights, radius)?;
        best.observe(&w, objective, gap);
        trace.push(TraceRow {
            iter: k,
            objective,
            trace_norm: weighted_trace_norm(&w, &weights)?,
            gap,
        });
        best_history.push(best.objective);
        iterations = k + 1;
        if should_stop(&best_history, cfg.tolerance) {
            break;
        }
        match cfg.method {
            SolverMethod::ProjectedSubgradient => {
                let step = cfg.step_scale / ((k + 1) as f64).sqrt();
                let mut moved = w.matrix().clone();
                moved.axpy(-step, &grad);
                if !moved.all_finite() {
                    return Err(Error::NumericalFailure { iteration: k });
                }
                w = project_trace_ball(&TaskMatrix::new(moved), &weights, radius).map_err(
                    |e| match e {
                        Error::NonFinite { .. } => Error::NumericalFailure { iteration: k },
                        other => other,
                    },
                )?;
            }
            SolverMethod::FrankWolfe => {
                let lmo = lmo_trace_ball(&grad, &weights, radius)?;
                if lmo.degenerate {
                    break;
                }
                let gamma = 2.0 / (k as f64 + 2.0);
                let mut next = w.matrix().scale(1.0 - gamma);
                next.axpy(gamma, lmo.vertex.matrix());
                w = TaskMatrix::new(next);
            }
        }
    }

    Ok(SolveResult {
        objective: best.objective,
        certified_gap: best.certified_gap(),
        weights: best.weights,
        trace,
        iterations,
        nonsmooth_warning,
    })
}

/// Per-task projected subgradient under `||w_t|| <= radius`; the single-task
/// baseline for comparisons. Tasks are solved in lockstep and the trace
/// carries the task-averaged objective.
pub fn solve_independent(
    data: &MultitaskDataset,
    loss: &LossSpec,
    radius: f64,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    if radius < 0.0 {
        return Err(Error::InvalidConfig("per-task radius must be nonnegative".into()));
    }
    cfg.validate()?;
    let dim = data.dim();
    let t_count = data.task_count();
    let mut w = TaskMatrix::zeros(dim, t_count);
    let mut best_obj = vec![f64::INFINITY; t_count];
    let mut best_cols: Vec<Vec<f64>> = vec![vec![0.0; dim]; t_count];
    let mut best_lower = vec![f64::NEG_INFINITY; t_count];
    let mut trace = Vec::new();
    let mut best_history = Vec::new();
    let mut iterations = 0;

    for k in 0..cfg.max_iters {
        if !w.matrix().all_finite() {
            return Err(Error::NumericalFailure { iteration: k });
        }
        let mut mean_gap = 0.0;
        let mut next = w.matrix().clone();
        for (t, task) in data.tasks().iter().enumerate() {
            let n = task.len() as f64;
            let col = w.column(t);
            let mut objective = 0.0;
            let mut grad = vec![0.0; dim];
            for i in 0..task.len() {
                let x = task.input(i);
                let y = task.label(i);
                let yhat: f64 = col.iter().zip(x).map(|(a, b)| a * b).sum();
                objective += loss.eval(yhat, y);
                let g = loss.subgradient(yhat, y);
                if g != 0.0 {
                    for (gi, &xv) in grad.iter_mut().zip(x) {
                        *gi += g * xv / n;
                    }
                }
            }
            objective /= n;
            let grad_norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let gap = col.iter().zip(&grad).map(|(a, b)| a * b).sum::<f64>() + radius * grad_norm;
            mean_gap += gap / t_count as f64;
            if objective < best_obj[t] {
                best_obj[t] = objective;
                best_cols[t] = col.clone();
            }
            if objective - gap > best_lower[t] {
                best_lower[t] = objective - gap;
            }
            // Gradient step then projection onto the Euclidean ball.
            let step = cfg.step_scale / ((k + 1) as f64).sqrt();
            let mut moved: Vec<f64> = col.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
            let norm: f64 = moved.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > radius {
                let scale = if radius == 0.0 { 0.0 } else { radius / norm };
                moved.iter_mut().for_each(|x| *x *= scale);
            }
            if !moved.iter().all(|x| x.is_finite()) {
                return Err(Error::NumericalFailure { iteration: k });
            }
            next.set_column(t, &moved);
        }
        let mean_best: f64 = best_obj.iter().sum::<f64>() / t_count as f64;
        trace.push(TraceRow {
            iter: k,
            objective: mean_best,
            trace_norm: linop::trace_norm(w.matrix())?,
            gap: mean_gap,
        });
        best_history.push(mean_best);
        iterations = k + 1;
        w = TaskMatrix::new(next);
        if should_stop(&best_history, cfg.tolerance) {
            break;
        }
    }

    let mut out = Matrix::zeros(dim, t_count);
    for (t, col) in best_cols.iter().enumerate() {
        out.set_column(t, col);
    }
    let objective = best_obj.iter().sum::<f64>() / t_count as f64;
    let certified_gap = best_obj
        .iter()
        .zip(&best_lower)
        .map(|(o, l)| (o - l).max(0.0))
        .sum::<f64>()
        / t_count as f64;
    Ok(SolveResult {
        weights: TaskMatrix::new(out),
        objective,
        certified_gap,
        trace,
        iterations,
        nonsmooth_warning: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LossSpec, TaskGenerator};
    use approx::assert_relative_eq;

    #[test]
    fn task_weights_equal_sizes_are_unit() {
        let w = TaskWeights::from_sizes(&[10, 10, 10]).unwrap();
        assert_eq!(w.entries(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn task_weights_formula() {
        // sizes (1, 4): nbar = 2.5, s = (sqrt(2.5), sqrt(0.625)).
        let w = TaskWeights::from_sizes(&[1, 4]).unwrap();
        assert_relative_eq!(w.get(0), 2.5f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(w.get(1), 0.625f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn task_weights_single_task_is_one() {
        let w = TaskWeights::from_sizes(&[37]).unwrap();
        assert_eq!(w.entries(), &[1.0]);
    }

    #[test]
    fn task_weights_reject_empty() {
        assert!(matches!(TaskWeights::from_sizes(&[]), Err(Error::Empty(_))));
    }

    /// Dense grid search over the feasible set, the independent oracle for
    /// the closed-form simplex projection.
    fn grid_search_l1_project(v: &[f64; 2], radius: f64) -> [f64; 2] {
        let steps = 2000;
        let mut best = [0.0, 0.0];
        let mut best_d = f64::INFINITY;
        for i in 0..=steps {
            let a = radius * i as f64 / steps as f64;
            for j in 0..=steps - i {
                let b = radius * j as f64 / steps as f64;
                let d = (a - v[0]).powi(2) + (b - v[1]).powi(2);
                if d < best_d {
                    best_d = d;
                    best = [a, b];
                }
            }
        }
        best
    }

    #[test]
    fn l1_project_threshold_case_matches_grid_search() {
        let v = [3.0, 1.0];
        let got = l1_ball_project(&v, 2.0);
        let oracle = grid_search_l1_project(&v, 2.0);
        assert_relative_eq!(got[0], oracle[0], epsilon = 2e-3);
        assert_relative_eq!(got[1], oracle[1], epsilon = 2e-3);
        // KKT threshold theta = 1 gives exactly (2, 0).
        assert_relative_eq!(got[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(got[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn l1_project_feasible_input_unchanged() {
        let v = [0.5, 0.5];
        assert_eq!(l1_ball_project(&v, 2.0), v.to_vec());
    }

    #[test]
    fn l1_project_symmetric_case() {
        let got = l1_ball_project(&[1.0, 1.0], 1.0);
        assert_relative_eq!(got[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(got[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn trace_ball_projection_diagonal_case() {
        let w = TaskMatrix::new(Matrix::diagonal(&[3.0, 1.0]));
        let s = TaskWeights::identity(2);
        let p = project_trace_ball(&w, &s, 2.0).unwrap();
        assert_relative_eq!(p.matrix().get(0, 0), 2.0, epsilon = 1e-10);
        assert_relative_eq!(p.matrix().get(1, 1), 0.0, epsilon = 1e-10);
        assert_relative_eq!(p.matrix().get(0, 1), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn trace_ball_projection_feasible_and_zero() {
        let s = TaskWeights::identity(2);
        let w = TaskMatrix::new(Matrix::diagonal(&[0.4, 0.3]));
        assert_eq!(project_trace_ball(&w, &s, 2.0).unwrap(), w);
        let z = TaskMatrix::zeros(3, 2);
        assert_eq!(project_trace_ball(&z, &s, 1.0).unwrap(), z);
    }

    #[test]
    fn trace_ball_projection_feasibility_and_idempotence() {
        let mut rng = crate::seeding::stream(41, &[7]);
        use rand::Rng;
        for _ in 0..50 {
            let w = TaskMatrix::new(Matrix::from_fn(5, 3, |_, _| rng.random_range(-2.0..2.0)));
            let s = TaskWeights::from_sizes(&[3, 9, 5]).unwrap();
            let radius = rng.random_range(0.1..3.0);
            let p = project_trace_ball(&w, &s, radius).unwrap();
            let tn = weighted_trace_norm(&p, &s).unwrap();
            assert!(tn <= radius + 1e-8, "trace norm {tn} exceeds radius {radius}");
            let pp = project_trace_ball(&p, &s, radius).unwrap();
            let drift = pp.matrix().sub(p.matrix()).unwrap().frobenius_norm();
            assert!(drift < 1e-8, "projection not idempotent: drift {drift}");
        }
    }

    #[test]
    fn lmo_picks_top_singular_direction() {
        let g = Matrix::diagonal(&[2.0, 1.0]);
        let s = TaskWeights::identity(2);
        let lmo = lmo_trace_ball(&g, &s, 1.0).unwrap();
        assert!(!lmo.degenerate);
        assert_relative_eq!(lmo.vertex.matrix().get(0, 0), -1.0, epsilon = 1e-10);
        assert_relative_eq!(lmo.vertex.matrix().get(1, 1), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn lmo_achieves_negative_radius_times_dual_norm() {
        let mut rng = crate::seeding::stream(42, &[1]);
        use rand::Rng;
        for _ in 0..20 {
            let g = Matrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
            let s = TaskWeights::from_sizes(&[2, 5, 4]).unwrap();
            let radius = 1.7;
            let lmo = lmo_trace_ball(&g, &s, radius).unwrap();
            let value = lmo.vertex.matrix().frobenius_dot(&g).unwrap();
            let inv = s.inverse_entries();
            let scaled = Matrix::from_fn(4, 3, |i, j| g.get(i, j) * inv[j]);
            let dual = linop::spectral_norm(&scaled).unwrap();
            assert_relative_eq!(value, -radius * dual, epsilon = 1e-8);
            // Rank one and on the sphere of the weighted ball.
            let tn = weighted_trace_norm(&lmo.vertex, &s).unwrap();
            assert_relative_eq!(tn, radius, epsilon = 1e-8);
            let sn = linop::spectral_norm(&lmo.vertex.scaled_by(&s)).unwrap();
            assert_relative_eq!(sn, radius, epsilon = 1e-8);
        }
    }

    #[test]
    fn lmo_zero_gradient_is_degenerate() {
        let g = Matrix::zeros(3, 2);
        let s = TaskWeights::identity(2);
        let lmo = lmo_trace_ball(&g, &s, 1.0).unwrap();
        assert!(lmo.degenerate);
        assert!(lmo.vertex.matrix().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn lmo_scales_linearly_in_radius() {
        let g = Matrix::from_rows(2, 2, vec![0.3, -0.7, 0.2, 0.9]).unwrap();
        let s = TaskWeights::identity(2);
        let a = lmo_trace_ball(&g, &s, 1.0).unwrap();
        let b = lmo_trace_ball(&g, &s, 2.5).unwrap();
        let scaled = a.vertex.matrix().scale(2.5);
        assert!(scaled.sub(b.vertex.matrix()).unwrap().frobenius_norm() < 1e-10);
    }

    /// Normal-equations least squares per task; small dense solve via
    /// Gaussian elimination with partial pivoting, independent of the
    /// iterative path under test.
    fn normal_equations_risk(data: &MultitaskDataset) -> f64 {
        let d = data.dim();
        let mut total = 0.0;
        for task in data.tasks() {
            let n = task.len();
            let mut a = vec![0.0; d * d];
            let mut b = vec![0.0; d];
            for i in 0..n {
                let x = task.input(i);
                for r in 0..d {
                    b[r] += x[r] * task.label(i);
                    for c in 0..d {
                        a[r * d + c] += x[r] * x[c];
                    }
                }
            }
            // Solve A w = b.
            let mut m = a;
            let mut rhs = b;
            for col in 0..d {
                let mut piv = col;
                for r in (col + 1)..d {
                    if m[r * d + col].abs() > m[piv * d + col].abs() {
                        piv = r;
                    }
                }
                for c in 0..d {
                    m.swap(col * d + c, piv * d + c);
                }
                rhs.swap(col, piv);
                let diag = m[col * d + col];
                for r in 0..d {
                    if r == col || m[r * d + col] == 0.0 {
                        continue;
                    }
                    let f = m[r * d + col] / diag;
                    for c in 0..d {
                        m[r * d + c] -= f * m[col * d + c];
                    }
                    rhs[r] -= f * rhs[col];
                }
            }
            let w: Vec<f64> = (0..d).map(|r| rhs[r] / m[r * d + r]).collect();
            let mut risk = 0.0;
            for i in 0..n {
                let yhat: f64 = task.input(i).iter().zip(&w).map(|(x, wv)| x * wv).sum();
                risk += (yhat - task.label(i)).powi(2);
            }
            total += risk / n as f64;
        }
        total / data.task_count() as f64
    }

    fn least_squares_instance(seed: u64, tasks: usize, dim: usize, n: usize) -> MultitaskDataset {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = crate::seeding::stream(seed, &[100]);
        let mut out = Vec::new();
        for _ in 0..tasks {
            let w0: Vec<f64> = (0..dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.15)
                .collect();
            let mut flat = Vec::new();
            let mut labels = Vec::new();
            for _ in 0..n {
                let mut x: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let target = 0.9 * rng.random_range(0.2..1.0f64);
                x.iter_mut().for_each(|v| *v *= target / norm);
                let y: f64 =
                    x.iter().zip(&w0).map(|(a, b)| a * b).sum::<f64>() + 0.02 * rng.sample::<f64, _>(StandardNormal);
                flat.extend_from_slice(&x);
                labels.push(y.clamp(-1.0, 1.0));
            }
            let inputs = Matrix::from_rows(n, dim, flat).unwrap();
            out.push(crate::data::TaskSample::new(inputs, labels).unwrap());
        }
        MultitaskDataset::new(out, dim).unwrap()
    }

    #[test]
    fn unconstrained_solve_matches_normal_equations() {
        let data = least_squares_instance(7, 1, 6, 40);
        let cfg = SolverConfig {
            max_iters: 5000,
            step_scale: 4.0,
            tolerance: 0.0,
            ..SolverConfig::default()
        };
        let fit = solve_trace_ball(&data, &LossSpec::clipped_squared(), 1e3, &cfg).unwrap();
        let oracle = normal_equations_risk(&data);
        assert!(
            (fit.objective - oracle).abs() < 1e-3,
            "solver risk {} vs normal equations {}",
            fit.objective,
            oracle
        );
    }

    #[test]
    fn realizable_instance_reaches_near_zero_risk() {
        let gen = TaskGenerator::new(8, 6, 2, 4, 30, 0.0, 13).unwrap();
        let (data, truth) = gen.generate().unwrap();
        let b = (2f64).sqrt();
        let s = TaskWeights::from_sizes(&data.sizes()).unwrap();
        let feasible = weighted_trace_norm(&truth, &s).unwrap();
        assert!(feasible <= b * (4f64).sqrt() + 1e-9);
        let cfg = SolverConfig {
            max_iters: 4000,
            step_scale: 2.0,
            tolerance: 0.0,
            ..SolverConfig::default()
        };
        let fit = solve_trace_ball(&data, &LossSpec::clipped_squared(), b, &cfg).unwrap();
        assert!(fit.objective <= 1e-2, "risk {}", fit.objective);
    }

    #[test]
    fn tiny_ball_collapses_to_zero_predictor() {
        let gen = TaskGenerator::new(5, 4, 2, 3, 10, 0.1, 3).unwrap();
        let (data, _) = gen.generate().unwrap();
        let loss = LossSpec::clipped_absolute();
        let cfg = SolverConfig { max_iters: 50, ..SolverConfig::default() };
        let fit = solve_trace_ball(&data, &loss, 1e-9, &cfg).unwrap();
        let zero_risk =
            empirical_risk_of_zero(&data, &loss);
        assert!(fit.weights.matrix().frobenius_norm() < 1e-6);
        assert!((fit.objective - zero_risk).abs() < 1e-6);
    }

    fn empirical_risk_of_zero(data: &MultitaskDataset, loss: &LossSpec) -> f64 {
        let w = TaskMatrix::zeros(data.dim(), data.task_count());
        crate::data::empirical_risk(&w, data, loss).unwrap()
    }

    #[test]
    fn iterates_stay_feasible_and_best_objective_monotone() {
        let gen = TaskGenerator::new(6, 5, 2, 4, 12, 0.1, 23).unwrap();
        let (data, _) = gen.generate().unwrap();
        let b = 1.3;
        let radius = b * (data.task_count() as f64).sqrt();
        let cfg = SolverConfig { max_iters: 300, tolerance: 0.0, ..SolverConfig::default() };
        let fit = solve_trace_ball(&data, &LossSpec::clipped_absolute(), b, &cfg).unwrap();
        let mut best = f64::INFINITY;
        let mut prev_best = f64::INFINITY;
        for row in &fit.trace {
            assert!(row.trace_norm <= radius + 1e-6);
            best = best.min(row.objective);
            assert!(best <= prev_best + 1e-15);
            prev_best = best;
        }
    }

    #[test]
    fn single_task_trace_ball_agrees_with_independent() {
        let gen = TaskGenerator::new(5, 4, 2, 1, 25, 0.05, 31).unwrap();
        let (data, _) = gen.generate().unwrap();
        let loss = LossSpec::clipped_squared();
        let cfg = SolverConfig {
            max_iters: 3000,
            step_scale: 2.0,
            tolerance: 0.0,
            ..SolverConfig::default()
        };
        // For one task the weighted trace norm is the Euclidean norm, so both
        // solvers address the same feasible set at matched radius.
        let b = 0.8;
        let joint = solve_trace_ball(&data, &loss, b, &cfg).unwrap();
        let single = solve_independent(&data, &loss, b, &cfg).unwrap();
        assert!(
            (joint.objective - single.objective).abs() < 1e-3,
            "joint {} vs independent {}",
            joint.objective,
            single.objective
        );
    }

    #[test]
    fn independent_zero_radius_gives_zero_predictor() {
        let gen = TaskGenerator::new(4, 3, 2, 2, 8, 0.1, 7).unwrap();
        let (data, _) = gen.generate().unwrap();
        let loss = LossSpec::clipped_absolute();
        let cfg = SolverConfig { max_iters: 30, ..SolverConfig::default() };
        let fit = solve_independent(&data, &loss, 0.0, &cfg).unwrap();
        assert!(fit.weights.matrix().frobenius_norm() == 0.0);
        assert!((fit.objective - empirical_risk_of_zero(&data, &loss)).abs() < 1e-12);
    }

    #[test]
    fn independent_realizable_single_task() {
        let gen = TaskGenerator::new(6, 5, 3, 1, 40, 0.0, 47).unwrap();
        let (data, _) = gen.generate().unwrap();
        let cfg = SolverConfig {
            max_iters: 4000,
            step_scale: 2.0,
            tolerance: 0.0,
            ..SolverConfig::default()
        };
        let fit = solve_independent(&data, &LossSpec::clipped_squared(), 1.0, &cfg).unwrap();
        assert!(fit.objective <= 1e-2, "risk {}", fit.objective);
    }

    #[test]
    fn huge_step_scale_reports_numerical_failure() {
        let gen = TaskGenerator::new(4, 3, 2, 2, 8, 0.3, 7).unwrap();
        let (data, _) = gen.generate().unwrap();
        let cfg = SolverConfig {
            max_iters: 50,
            step_scale: 1e308,
            tolerance: 0.0,
            ..SolverConfig::default()
        };
        let out = solve_trace_ball(&data, &LossSpec::clipped_squared(), 1e300, &cfg);
        assert!(matches!(out, Err(Error::NumericalFailure { .. })));
    }

    #[test]
    fn frank_wolfe_flags_nonsmooth_loss() {
        let gen = TaskGenerator::new(4, 3, 2, 2, 8, 0.1, 7).unwrap();
        let (data, _) = gen.generate().unwrap();
        let cfg = SolverConfig {
            method: SolverMethod::FrankWolfe,
            max_iters: 60,
            ..SolverConfig::default()
        };
        let flagged = solve_trace_ball(&data, &LossSpec::clipped_absolute(), 1.0, &cfg).unwrap();
        assert!(flagged.nonsmooth_warning);
        let smooth = solve_trace_ball(&data, &LossSpec::clipped_squared(), 1.0, &cfg).unwrap();
        assert!(!smooth.nonsmooth_warning);
    }

    #[test]
    fn frank_wolfe_reduces_risk_on_smooth_loss() {
        let gen = TaskGenerator::new(6, 5, 2, 3, 20, 0.05, 11).unwrap();
        let (data, _) = gen.generate().unwrap();
        let cfg = SolverConfig {
            method: SolverMethod::FrankWolfe,
            max_iters: 300,
            tolerance: 0.0,
            ..SolverConfig::default()
        };
        let fit = solve_trace_ball(&data, &LossSpec::clipped_squared(), 1.5, &cfg).unwrap();
        let zero = empirical_risk_of_zero(&data, &LossSpec::clipped_squared());
        assert!(fit.objective < zero, "fw risk {} vs zero-predictor {}", fit.objective, zero);
    }
}
