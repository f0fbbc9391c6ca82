//! Multitask datasets, clipped Lipschitz losses, synthetic sphere/subspace
//! generators, and Monte Carlo risk oracles.

use crate::error::{Error, Result};
use crate::seeding;
use crate::solver::TaskMatrix;
use crate::linop::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Slack allowed on the unit-ball input constraint at generation time.
const INPUT_NORM_SLACK: f64 = 1e-12;
/// Slack allowed when loading datasets from disk.
const LOAD_NORM_SLACK: f64 = 1e-9;

// Stream tags for seed derivation.
const TAG_TRUTH: u64 = 0x74727574; // ground-truth task vectors
const TAG_SAMPLE: u64 = 0x73616d70; // per-(task, sample) training draws
const TAG_HELDOUT: u64 = 0x6865_6c64; // per-(task, sample) evaluation draws

/// One task's sample: `n_t` input vectors (rows) with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSample {
    inputs: Matrix,
    labels: Vec<f64>,
}

impl TaskSample {
    pub fn new(inputs: Matrix, labels: Vec<f64>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.rows(),
                got: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(Error::Empty("task must have at least one example"));
        }
        if !labels.iter().all(|y| y.is_finite()) {
            return Err(Error::NonFinite { context: "task labels" });
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }
}

/// A collection of tasks over a common input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MultitaskDataset {
    tasks: Vec<TaskSample>,
    dim: usize,
}

impl MultitaskDataset {
    /// Validates input norms (`||x|| <= 1` up to slack) and non-emptiness.
    pub fn new(tasks: Vec<TaskSample>, dim: usize) -> Result<Self> {
        Self::with_norm_slack(tasks, dim, INPUT_NORM_SLACK)
    }

    fn with_norm_slack(tasks: Vec<TaskSample>, dim: usize, slack: f64) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Empty("dataset must have at least one task"));
        }
        for task in &tasks {
            if task.inputs.cols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: task.inputs.cols(),
                });
            }
            for i in 0..task.len() {
                let n2: f64 = task.input(i).iter().map(|x| x * x).sum();
                if n2.sqrt() > 1.0 + slack {
                    return Err(Error::InvalidConfig(format!(
                        "input norm {} exceeds the unit ball",
                        n2.sqrt()
                    )));
                }
            }
        }
        Ok(Self { tasks, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn task(&self, t: usize) -> &TaskSample {
        &self.tasks[t]
    }

    pub fn tasks(&self) -> &[TaskSample] {
        &self.tasks
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.tasks.iter().map(|t| t.len()).collect()
    }

    pub fn total_samples(&self) -> usize {
        self.tasks.iter().map(|t| t.len()).sum()
    }

    /// Average per-task sample size.
    pub fn nbar(&self) -> f64 {
        self.total_samples() as f64 / self.task_count() as f64
    }

    /// Writes the `task,y,x0,...,x{d-1}` CSV format.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "task,y")?;
        for j in 0..self.dim {
            write!(f, ",x{j}")?;
        }
        writeln!(f)?;
        for (t, task) in self.tasks.iter().enumerate() {
            for i in 0..task.len() {
                write!(f, "{t},{}", task.label(i))?;
                for x in task.input(i) {
                    write!(f, ",{x}")?;
                }
                writeln!(f)?;
            }
        }
        Ok(())
    }

    /// Loads the CSV format written by [`write_csv`], validating input norms.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.display().to_string(),
            line,
            message,
        };
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.len() < 3 || cols[0] != "task" || cols[1] != "y" {
            return Err(parse_err(1, format!("unexpected header: {header}")));
        }
        let dim = cols.len() - 2;
        for (j, c) in cols[2..].iter().enumerate() {
            if *c != format!("x{j}") {
                return Err(parse_err(1, format!("unexpected input column name: {c}")));
            }
        }
        let mut per_task: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != dim + 2 {
                return Err(parse_err(
                    lineno + 2,
                    format!("expected {} fields, got {}", dim + 2, fields.len()),
                ));
            }
            let t: usize = fields[0]
                .parse()
                .map_err(|e| parse_err(lineno + 2, format!("bad task index: {e}")))?;
            let y: f64 = fields[1]
                .parse()
                .map_err(|e| parse_err(lineno + 2, format!("bad label: {e}")))?;
            while per_task.len() <= t {
                per_task.push((Vec::new(), Vec::new()));
            }
            for field in &fields[2..] {
                let x: f64 = field
                    .parse()
                    .map_err(|e| parse_err(lineno + 2, format!("bad input value: {e}")))?;
                per_task[t].0.push(x);
            }
            per_task[t].1.push(y);
        }
        let mut tasks = Vec::with_capacity(per_task.len());
        for (flat, labels) in per_task {
            if labels.is_empty() {
                return Err(Error::Empty("task with no rows in dataset file"));
            }
            let inputs = Matrix::from_rows(labels.len(), dim, flat)?;
            tasks.push(TaskSample::new(inputs, labels)?);
        }
        Self::with_norm_slack(tasks, dim, LOAD_NORM_SLACK)
    }
}

/// The two clipped loss families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `min(|yhat - y|, 1)`, Lipschitz constant 1.
    ClippedAbsolute,
    /// `min((yhat - y)^2, 1)`, Lipschitz constant 2.
    ClippedSquared,
}

/// A `[0,1]`-valued loss, Lipschitz in its first argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    kind: LossKind,
    lipschitz: f64,
}

impl LossSpec {
    pub fn clipped_absolute() -> Self {
        Self { kind: LossKind::ClippedAbsolute, lipschitz: 1.0 }
    }

    pub fn clipped_squared() -> Self {
        Self { kind: LossKind::ClippedSquared, lipschitz: 2.0 }
    }

    pub fn from_kind(kind: LossKind) -> Self {
        match kind {
            LossKind::ClippedAbsolute => Self::clipped_absolute(),
            LossKind::ClippedSquared => Self::clipped_squared(),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "clipped-absolute" => Ok(Self::clipped_absolute()),
            "clipped-squared" => Ok(Self::clipped_squared()),
            other => Err(Error::InvalidConfig(format!("unknown loss kind: {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            LossKind::ClippedAbsolute => "clipped-absolute",
            LossKind::ClippedSquared => "clipped-squared",
        }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Loss value in `[0, 1]`.
    pub fn eval(&self, yhat: f64, y: f64) -> f64 {
        let r = yhat - y;
        match self.kind {
            LossKind::ClippedAbsolute => r.abs().min(1.0),
            LossKind::ClippedSquared => (r * r).min(1.0),
        }
    }

    /// Derivative in the first argument where it exists; 0 at the kinks
    /// (`yhat = y` and the clipping boundary) so runs stay deterministic.
    pub fn subgradient(&self, yhat: f64, y: f64) -> f64 {
        let r = yhat - y;
        match self.kind {
            LossKind::ClippedAbsolute => {
                if r.abs() >= 1.0 || r == 0.0 {
                    0.0
                } else {
                    r.signum()
                }
            }
            LossKind::ClippedSquared => {
                if r * r >= 1.0 {
                    0.0
                } else {
                    2.0 * r
                }
            }
        }
    }
}

/// Synthetic task family: inputs uniform on the unit sphere of the first
/// `sphere_dim` coordinates, ground-truth task vectors unit-norm in the first
/// `subspace_dim` coordinates, labels linear plus Gaussian noise, clamped to
/// `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGenerator {
    pub dim: usize,
    pub sphere_dim: usize,
    pub subspace_dim: usize,
    pub sizes: Vec<usize>,
    pub noise: f64,
    pub seed: u64,
}

impl TaskGenerator {
    /// Uniform per-task sample sizes.
    pub fn new(
        dim: usize,
        sphere_dim: usize,
        subspace_dim: usize,
        task_count: usize,
        samples_per_task: usize,
        noise: f64,
        seed: u64,
    ) -> Result<Self> {
        Self::with_sizes(dim, sphere_dim, subspace_dim, vec![samples_per_task; task_count], noise, seed)
    }

    pub fn with_sizes(
        dim: usize,
        sphere_dim: usize,
        subspace_dim: usize,
        sizes: Vec<usize>,
        noise: f64,
        seed: u64,
    ) -> Result<Self> {
        let gen = Self { dim, sphere_dim, subspace_dim, sizes, noise, seed };
        gen.validate()?;
        Ok(gen)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subspace_dim > self.sphere_dim {
            return Err(Error::InvalidConfig(format!(
                "subspace dimension {} exceeds sphere dimension {}",
                self.subspace_dim, self.sphere_dim
            )));
        }
        if self.sphere_dim > self.dim {
            return Err(Error::InvalidConfig(format!(
                "sphere dimension {} exceeds ambient dimension {}",
                self.sphere_dim, self.dim
            )));
        }
        if self.dim == 0 || self.sphere_dim == 0 || self.subspace_dim == 0 {
            return Err(Error::InvalidConfig("dimensions must be positive".into()));
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::InvalidConfig("every task needs at least one sample".into()));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(Error::InvalidConfig("noise level must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn task_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn nbar(&self) -> f64 {
        self.sizes.iter().sum::<usize>() as f64 / self.sizes.len() as f64
    }

    /// Draws the dataset together with the generating task matrix.
    pub fn generate(&self) -> Result<(MultitaskDataset, TaskMatrix)> {
        self.validate()?;
        let truth = self.ground_truth();
        let mut tasks = Vec::with_capacity(self.task_count());
        for (t, &n) in self.sizes.iter().enumerate() {
            let mut flat = Vec::with_capacity(n * self.dim);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let mut rng = seeding::stream(self.seed, &[TAG_SAMPLE, t as u64, i as u64]);
                let x = self.draw_input(&mut rng);
                let y = self.draw_label(&truth, t, &x, &mut rng);
                flat.extend_from_slice(&x);
                labels.push(y);
            }
            let inputs = Matrix::from_rows(n, self.dim, flat)?;
            tasks.push(TaskSample::new(inputs, labels)?);
        }
        Ok((MultitaskDataset::new(tasks, self.dim)?, truth))
    }

    /// Ground-truth task vectors, derived from the seed alone so that risk
    /// oracles can reconstruct them without the dataset.
    pub fn ground_truth(&self) -> TaskMatrix {
        let mut w = Matrix::zeros(self.dim, self.task_count());
        for t in 0..self.task_count() {
            let mut rng = seeding::stream(self.seed, &[TAG_TRUTH, t as u64]);
            let v = sample_sphere(&mut rng, self.subspace_dim);
            for (row, &value) in v.iter().enumerate() {
                w.set(row, t, value);
            }
        }
        TaskMatrix::new(w)
    }

    fn draw_input(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        let s = sample_sphere(rng, self.sphere_dim);
        x[..self.sphere_dim].copy_from_slice(&s);
        x
    }

    fn draw_label(&self, truth: &TaskMatrix, t: usize, x: &[f64], rng: &mut ChaCha8Rng) -> f64 {
        let clean = truth.predict(t, x);
        let noisy = if self.noise > 0.0 {
            let eps: f64 = rng.sample(StandardNormal);
            clean + self.noise * eps
        } else {
            clean
        };
        noisy.clamp(-1.0, 1.0)
    }

    /// One held-out draw for task `t` from an evaluation stream independent of
    /// the training sample.
    fn heldout_draw(&self, truth: &TaskMatrix, t: usize, i: usize, eval_seed: u64) -> (Vec<f64>, f64) {
        let mut rng = seeding::stream(eval_seed, &[TAG_HELDOUT, t as u64, i as u64]);
        let x = self.draw_input(&mut rng);
        let y = self.draw_label(truth, t, &x, &mut rng);
        (x, y)
    }
}

/// Uniform point on the unit sphere of `R^m` via normalized Gaussians.
fn sample_sphere(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Task-averaged, per-task sample-averaged loss of `weights` on `data`.
pub fn empirical_risk(weights: &TaskMatrix, data: &MultitaskDataset, loss: &LossSpec) -> Result<f64> {
    if weights.dim() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), got: weights.dim() });
    }
    if weights.task_count() != data.task_count() {
        return Err(Error::DimensionMismatch {
            expected: data.task_count(),
            got: weights.task_count(),
        });
    }
    let mut total = 0.0;
    for (t, task) in data.tasks().iter().enumerate() {
        let mut task_sum = 0.0;
        for i in 0..task.len() {
            task_sum += loss.eval(weights.predict(t, task.input(i)), task.label(i));
        }
        total += task_sum / task.len() as f64;
    }
    Ok(total / data.task_count() as f64)
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Monte Carlo estimate of the task-averaged population risk of `weights`
/// under the generator's data law, using `samples` fresh draws per task.
///
/// The draws depend only on `(seed, task, sample)`, so two calls with the same
/// seed score different weights on identical held-out data.
pub fn population_risk(
    weights: &TaskMatrix,
    gen: &TaskGenerator,
    loss: &LossSpec,
    samples: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    if samples == 0 {
        return Err(Error::InvalidConfig("population risk needs at least one sample".into()));
    }
    if weights.dim() != gen.dim {
        return Err(Error::DimensionMismatch { expected: gen.dim, got: weights.dim() });
    }
    if weights.task_count() != gen.task_count() {
        return Err(Error::DimensionMismatch {
            expected: gen.task_count(),
            got: weights.task_count(),
        });
    }
    let truth = gen.ground_truth();
    let t_count = gen.task_count();
    let mut mean_acc = 0.0;
    let mut var_acc = 0.0;
    for t in 0..t_count {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..samples {
            let (x, y) = gen.heldout_draw(&truth, t, i, seed);
            let l = loss.eval(weights.predict(t, &x), y);
            sum += l;
            sumsq += l * l;
        }
        let m = sum / samples as f64;
        mean_acc += m;
        if samples > 1 {
            let var = (sumsq - samples as f64 * m * m).max(0.0) / (samples as f64 - 1.0);
            var_acc += var / samples as f64;
        }
    }
    let tf = t_count as f64;
    Ok(RiskEstimate { mean: mean_acc / tf, stderr: (var_acc / (tf * tf)).sqrt() })
}
