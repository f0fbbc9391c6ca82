//! Batch orchestration: dataset synthesis, training, bound evaluation,
//! concentration suites, and parameter sweeps with machine-readable outputs.
//!
//! All randomness flows from a single root seed through documented derivation
//! paths (root, module tag, trial index); trials run in a parallel pool and
//! aggregate in index order, so outputs are byte-identical across runs.

use crate::bounds::{self, ComparisonVariant};
use crate::concentration::{self, OperatorSampler, TailReport};
use crate::data::{self, LossSpec, MultitaskDataset, TaskGenerator};
use crate::error::{Error, Result};
use crate::seeding;
use crate::solver::{self, SolverConfig, SolverMethod, TaskMatrix, TaskWeights};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

const TAG_TRIAL: u64 = 0x7472_6961;
const TAG_EVAL: u64 = 0x6576_616c;
const TAG_MOMENT: u64 = 0x6d6f_6d74;

/// Experiment configuration; a flat key-value text file with the keys
/// documented in the README. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub sphere_dim: usize,
    pub subspace_dim: usize,
    pub tasks: usize,
    pub samples_per_task: usize,
    pub noise: f64,
    pub loss: LossSpec,
    pub b: f64,
    pub delta: f64,
    pub method: SolverMethod,
    pub max_iters: usize,
    pub step_scale: f64,
    pub tolerance: f64,
    pub trials: usize,
    pub seed: u64,
    /// Total held-out samples per risk evaluation, split evenly over tasks.
    pub heldout_samples: usize,
    pub baseline_radius: f64,
    pub t_grid: Vec<usize>,
    pub n_grid: Vec<usize>,
    pub b_grid: Vec<f64>,
    pub k_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
    pub conc_trials: usize,
    pub conc_p: f64,
    pub conc_tasks: usize,
    pub conc_samples: usize,
    pub conc_dim: usize,
    pub conc_proj_count: usize,
    pub conc_proj_dim: usize,
    /// Fail `report` runs whose trials violate the bound check.
    pub assert_bounds: bool,
    /// Dataset path for `train`/`bounds`; defaults to `<out>/dataset.csv`.
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dim: 30,
            sphere_dim: 30,
            subspace_dim: 2,
            tasks: 20,
            samples_per_task: 25,
            noise: 0.05,
            loss: LossSpec::clipped_absolute(),
            b: 2f64.sqrt(),
            delta: 0.1,
            method: SolverMethod::ProjectedSubgradient,
            max_iters: 1500,
            step_scale: 2.0,
            tolerance: 0.0,
            trials: 10,
            seed: 42,
            heldout_samples: 100_000,
            baseline_radius: 1.0,
            t_grid: Vec::new(),
            n_grid: Vec::new(),
            b_grid: Vec::new(),
            k_grid: Vec::new(),
            m_grid: Vec::new(),
            conc_trials: 10_000,
            conc_p: 2.0,
            conc_tasks: 5,
            conc_samples: 4,
            conc_dim: 6,
            conc_proj_count: 20,
            conc_proj_dim: 20,
            assert_bounds: true,
            dataset: None,
            out: None,
        }
    }
}

fn parse_list<T: std::str::FromStr>(value: &str, key: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|_| Error::InvalidConfig(format!("bad entry {v:?} in {key}")))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_content(&text, &path.display().to_string())
    }

    pub fn from_str_content(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.set(key, value).map_err(|e| Error::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |k: &str, v: &str| Error::InvalidConfig(format!("bad value {v:?} for {k}"));
        match key {
            "d" => self.dim = value.parse().map_err(|_| bad(key, value))?,
            "sphere_dim" => self.sphere_dim = value.parse().map_err(|_| bad(key, value))?,
            "subspace_dim" => self.subspace_dim = value.parse().map_err(|_| bad(key, value))?,
            "tasks" => self.tasks = value.parse().map_err(|_| bad(key, value))?,
            "samples_per_task" => {
                self.samples_per_task = value.parse().map_err(|_| bad(key, value))?
            }
            "noise" => self.noise = value.parse().map_err(|_| bad(key, value))?,
            "loss" => self.loss = LossSpec::parse(value)?,
            "b" => self.b = value.parse().map_err(|_| bad(key, value))?,
            "delta" => self.delta = value.parse().map_err(|_| bad(key, value))?,
            "method" => self.method = SolverMethod::parse(value)?,
            "max_iters" => self.max_iters = value.parse().map_err(|_| bad(key, value))?,
            "step_scale" => self.step_scale = value.parse().map_err(|_| bad(key, value))?,
            "tolerance" => self.tolerance = value.parse().map_err(|_| bad(key, value))?,
            "trials" => self.trials = value.parse().map_err(|_| bad(key, value))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
            "heldout_samples" => {
                self.heldout_samples = value.parse().map_err(|_| bad(key, value))?
            }
            "baseline_radius" => {
                self.baseline_radius = value.parse().map_err(|_| bad(key, value))?
            }
            "t_grid" => self.t_grid = parse_list(value, key)?,
            "n_grid" => self.n_grid = parse_list(value, key)?,
            "b_grid" => self.b_grid = parse_list(value, key)?,
            "k_grid" => self.k_grid = parse_list(value, key)?,
            "m_grid" => self.m_grid = parse_list(value, key)?,
            "conc_trials" => self.conc_trials = value.parse().map_err(|_| bad(key, value))?,
            "conc_p" => self.conc_p = value.parse().map_err(|_| bad(key, value))?,
            "conc_tasks" => self.conc_tasks = value.parse().map_err(|_| bad(key, value))?,
            "conc_samples" => self.conc_samples = value.parse().map_err(|_| bad(key, value))?,
            "conc_dim" => self.conc_dim = value.parse().map_err(|_| bad(key, value))?,
            "conc_proj_count" => {
                self.conc_proj_count = value.parse().map_err(|_| bad(key, value))?
            }
            "conc_proj_dim" => self.conc_proj_dim = value.parse().map_err(|_| bad(key, value))?,
            "assert_bounds" => {
                self.assert_bounds = value.parse().map_err(|_| bad(key, value))?
            }
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            other => return Err(Error::InvalidConfig(format!("unknown config key: {other}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta.is_nan() || self.delta <= 0.0 || self.delta >= 1.0 {
            return Err(Error::InvalidConfig(format!("delta must be in (0,1), got {}", self.delta)));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trial count must be at least 1".into()));
        }
        TaskGenerator::new(
            self.dim,
            self.sphere_dim,
            self.subspace_dim,
            self.tasks,
            self.samples_per_task,
            self.noise,
            self.seed,
        )?;
        Ok(())
    }

    fn solver_config(&self, seed: u64) -> SolverConfig {
        SolverConfig {
            method: self.method,
            max_iters: self.max_iters,
            step_scale: self.step_scale,
            tolerance: self.tolerance,
            seed,
        }
    }

    fn generator(&self, seed: u64) -> Result<TaskGenerator> {
        TaskGenerator::new(
            self.dim,
            self.sphere_dim,
            self.subspace_dim,
            self.tasks,
            self.samples_per_task,
            self.noise,
            seed,
        )
    }

    /// Echo of the effective configuration, in stable key order.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        map.insert("d".into(), self.dim.to_string());
        map.insert("sphere_dim".into(), self.sphere_dim.to_string());
        map.insert("subspace_dim".into(), self.subspace_dim.to_string());
        map.insert("tasks".into(), self.tasks.to_string());
        map.insert("samples_per_task".into(), self.samples_per_task.to_string());
        map.insert("noise".into(), self.noise.to_string());
        map.insert("loss".into(), self.loss.name().to_string());
        map.insert("b".into(), self.b.to_string());
        map.insert("delta".into(), self.delta.to_string());
        map.insert("method".into(), self.method.name().to_string());
        map.insert("max_iters".into(), self.max_iters.to_string());
        map.insert("step_scale".into(), self.step_scale.to_string());
        map.insert("tolerance".into(), self.tolerance.to_string());
        map.insert("trials".into(), self.trials.to_string());
        map.insert("seed".into(), self.seed.to_string());
        map.insert("heldout_samples".into(), self.heldout_samples.to_string());
        map.insert("baseline_radius".into(), self.baseline_radius.to_string());
        map
    }
}

/// How the reference predictor was obtained for excess-risk estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceProxy {
    /// The generating task matrix, used whenever it lies in the feasible set.
    GroundTruth,
    /// A solve at a tenfold iteration budget, used when the truth is
    /// infeasible for the configured `B`.
    ReferenceSolve,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub emp_risk: f64,
    pub pop_risk: f64,
    pub pop_risk_reference: f64,
    pub excess: f64,
    pub solver_gap: f64,
    pub bound_i: f64,
    pub bound_ii: f64,
    pub kakade2: f64,
    pub kakade3: f64,
    pub baseline_pop_risk: f64,
    pub baseline_excess: f64,
    pub reference: ReferenceProxy,
    /// Excess plus certified solver gap stayed within the data-dependent
    /// bound.
    pub bound_holds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_excess: f64,
    pub mean_baseline_excess: f64,
    pub mean_bound_i: f64,
    pub mean_bound_ii: f64,
    pub mean_solver_gap: f64,
    pub bound_violations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config: BTreeMap<String, String>,
    pub trials: Vec<TrialRecord>,
    pub aggregate: Aggregate,
}

impl ExperimentRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse {
            path: "<experiment record>".into(),
            line: 0,
            message: e.to_string(),
        })
    }
}

/// One trial of the full pipeline: generate, fit, score held out, evaluate
/// bounds.
fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialRecord> {
    let gen_seed = seeding::derive(cfg.seed, &[TAG_TRIAL, trial as u64]);
    let eval_seed = seeding::derive(cfg.seed, &[TAG_EVAL, trial as u64]);
    let gen = cfg.generator(gen_seed)?;
    let (dataset, truth) = gen.generate()?;
    let weights = TaskWeights::from_sizes(&dataset.sizes())?;
    let radius = cfg.b * (cfg.tasks as f64).sqrt();
    let lipschitz = cfg.loss.lipschitz();

    let fit = solver::solve_trace_ball(&dataset, &cfg.loss, cfg.b, &cfg.solver_config(gen_seed))?;
    let baseline = solver::solve_independent(
        &dataset,
        &cfg.loss,
        cfg.baseline_radius,
        &cfg.solver_config(gen_seed),
    )?;

    // Reference predictor: the generating truth when feasible, otherwise a
    // longer reference solve.
    let truth_norm = solver::weighted_trace_norm(&truth, &weights)?;
    let (reference_w, reference): (TaskMatrix, ReferenceProxy) = if truth_norm <= radius + 1e-9 {
        (truth, ReferenceProxy::GroundTruth)
    } else {
        let mut long = cfg.solver_config(gen_seed);
        long.max_iters *= 10;
        let refit = solver::solve_trace_ball(&dataset, &cfg.loss, cfg.b, &long)?;
        (refit.weights, ReferenceProxy::ReferenceSolve)
    };

    // The same evaluation stream scores every predictor.
    let per_task = (cfg.heldout_samples / cfg.tasks).max(1);
    let pop = data::population_risk(&fit.weights, &gen, &cfg.loss, per_task, eval_seed)?;
    let pop_ref = data::population_risk(&reference_w, &gen, &cfg.loss, per_task, eval_seed)?;
    let pop_base = data::population_risk(&baseline.weights, &gen, &cfg.loss, per_task, eval_seed)?;

    let chat = bounds::empirical_covariance(&dataset)?;
    let analytic = bounds::analytic_covariance(&gen)?;
    let nbar = dataset.nbar();
    let bound_i =
        bounds::distribution_bound(lipschitz, cfg.b, nbar, cfg.tasks, cfg.delta, analytic.spectral_norm())?;
    let bound_ii =
        bounds::empirical_bound(lipschitz, cfg.b, nbar, cfg.tasks, cfg.delta, chat.spectral_norm())?;
    let kakade2 = bounds::comparison_bound(
        lipschitz,
        cfg.b,
        nbar,
        cfg.tasks,
        cfg.dim,
        bounds::max_observation_covariance_norm(&dataset)?,
        ComparisonVariant::PerObservation,
    );
    let kakade3 = bounds::comparison_bound(
        lipschitz,
        cfg.b,
        nbar,
        cfg.tasks,
        cfg.dim,
        analytic.spectral_norm(),
        ComparisonVariant::Distribution,
    );

    let excess = pop.mean - pop_ref.mean;
    Ok(TrialRecord {
        trial,
        emp_risk: fit.objective,
        pop_risk: pop.mean,
        pop_risk_reference: pop_ref.mean,
        excess,
        solver_gap: fit.certified_gap,
        bound_i: bound_i.total,
        bound_ii: bound_ii.total,
        kakade2,
        kakade3,
        baseline_pop_risk: pop_base.mean,
        baseline_excess: pop_base.mean - pop_ref.mean,
        reference,
        bound_holds: bound_ii.total - (excess + fit.certified_gap),
    })
}

fn aggregate(trials: &[TrialRecord]) -> Aggregate {
    let n = trials.len() as f64;
    Aggregate {
        mean_excess: trials.iter().map(|t| t.excess).sum::<f64>() / n,
        mean_baseline_excess: trials.iter().map(|t| t.baseline_excess).sum::<f64>() / n,
        mean_bound_i: trials.iter().map(|t| t.bound_i).sum::<f64>() / n,
        mean_bound_ii: trials.iter().map(|t| t.bound_ii).sum::<f64>() / n,
        mean_solver_gap: trials.iter().map(|t| t.solver_gap).sum::<f64>() / n,
        bound_violations: trials.iter().filter(|t| t.bound_holds < 0.0).count(),
    }
}

/// Runs the configured number of trials and, when an output directory is set,
/// writes one record file per trial plus the aggregate.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentRecord> {
    cfg.validate()?;
    let trials: Vec<TrialRecord> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| run_trial(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    let record = ExperimentRecord {
        config: cfg.echo(),
        aggregate: aggregate(&trials),
        trials,
    };
    if let Some(dir) = &cfg.out {
        std::fs::create_dir_all(dir)?;
        for t in &record.trials {
            let path = dir.join(format!("trial_{:03}.json", t.trial));
            std::fs::write(&path, serde_json::to_string_pretty(t).expect("trial serializes"))?;
        }
        std::fs::write(dir.join("aggregate.json"), record.to_json())?;
    }
    Ok(record)
}

/// One sweep cell result; columns mirror the CSV contract.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub trial: usize,
    pub tasks: usize,
    pub nbar: f64,
    pub dim: usize,
    pub sphere_dim: usize,
    pub subspace_dim: usize,
    pub b: f64,
    pub delta: f64,
    pub record: TrialRecord,
    pub subspace_limit: f64,
}

pub const SWEEP_HEADER: &str = "trial,T,n_bar,d,M,K,B,delta,emp_risk,pop_risk,excess,solver_gap,bound_i,bound_ii,kakade2,kakade3,baseline_excess,subspace_limit";

/// Cross product of the configured grids, one row per cell per trial. Cells
/// whose subspace/sphere/ambient dimensions are inconsistent are filtered
/// out; if the filter removes everything the CSV is header-only.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let t_grid = non_empty_or(&cfg.t_grid, cfg.tasks);
    let n_grid = non_empty_or(&cfg.n_grid, cfg.samples_per_task);
    let b_grid = non_empty_or(&cfg.b_grid, cfg.b);
    let k_grid = non_empty_or(&cfg.k_grid, cfg.subspace_dim);
    let m_grid = non_empty_or(&cfg.m_grid, cfg.sphere_dim);

    let mut cells = Vec::new();
    for &t in &t_grid {
        for &n in &n_grid {
            for &b in &b_grid {
                for &k in &k_grid {
                    for &m in &m_grid {
                        if k <= m && m <= cfg.dim && t >= 1 && n >= 1 && b > 0.0 {
                            cells.push((t, n, b, k, m));
                        }
                    }
                }
            }
        }
    }

    let rows: Vec<SweepRow> = cells
        .par_iter()
        .flat_map(|&(t, n, b, k, m)| {
            (0..cfg.trials).into_par_iter().map(move |trial| {
                let mut cell_cfg = cfg.clone();
                cell_cfg.tasks = t;
                cell_cfg.samples_per_task = n;
                cell_cfg.b = b;
                cell_cfg.subspace_dim = k;
                cell_cfg.sphere_dim = m;
                cell_cfg.out = None;
                let record = run_trial(&cell_cfg, trial)?;
                Ok(SweepRow {
                    trial,
                    tasks: t,
                    nbar: n as f64,
                    dim: cfg.dim,
                    sphere_dim: m,
                    subspace_dim: k,
                    b,
                    delta: cfg.delta,
                    subspace_limit: bounds::subspace_limit_bound(
                        cfg.loss.lipschitz(),
                        k,
                        n as f64,
                        m,
                    ),
                    record,
                })
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows)
}

fn non_empty_or<T: Copy>(grid: &[T], fallback: T) -> Vec<T> {
    if grid.is_empty() {
        vec![fallback]
    } else {
        grid.to_vec()
    }
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{SWEEP_HEADER}")?;
    for row in rows {
        let r = &row.record;
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.trial,
            row.tasks,
            row.nbar,
            row.dim,
            row.sphere_dim,
            row.subspace_dim,
            row.b,
            row.delta,
            r.emp_risk,
            r.pop_risk,
            r.excess,
            r.solver_gap,
            r.bound_i,
            r.bound_ii,
            r.kakade2,
            r.kakade3,
            r.baseline_excess,
            row.subspace_limit,
        )?;
    }
    Ok(())
}

/// Results of the concentration battery.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub subexponential: TailReport,
    pub oliveira: concentration::OliveiraReport,
    pub min_moment_gap: f64,
    pub moment_pass: bool,
    pub pass: bool,
}

/// Runs the tail verifiers and the exact moment battery with the configured
/// sizes, writing one CSV per tail report when an output directory is set.
pub fn concentration_suite(cfg: &ExperimentConfig) -> Result<SuiteReport> {
    // Rank-one Rademacher family over a synthetic dataset.
    let gen = TaskGenerator::new(
        cfg.conc_dim,
        cfg.conc_dim,
        1,
        cfg.conc_tasks,
        cfg.conc_samples,
        0.0,
        seeding::derive(cfg.seed, &[TAG_TRIAL, 0]),
    )?;
    let (dataset, _) = gen.generate()?;
    let sampler = OperatorSampler::rademacher_rank_one(&dataset)?;
    let r = sampler
        .subexponential_scale()
        .expect("rank-one Rademacher sampler has a moment scale");
    let q = cfg.conc_p / (cfg.conc_p - 1.0);
    let grid = concentration::default_s_grid(q * r * (cfg.conc_dim as f64).ln().max(1.0));
    let subexponential = concentration::verify_subexponential_tail(
        &sampler,
        cfg.conc_dim,
        r,
        cfg.conc_p,
        &grid,
        cfg.conc_trials,
        seeding::derive(cfg.seed, &[TAG_TRIAL, 1]),
    )?;

    // Independent rank-one sphere projections.
    let proj = OperatorSampler::BoundedPsd { dim: cfg.conc_proj_dim, count: cfg.conc_proj_count };
    let oliveira = concentration::verify_oliveira(
        &proj,
        cfg.conc_proj_count,
        cfg.conc_p,
        None,
        cfg.conc_trials,
        seeding::derive(cfg.seed, &[TAG_TRIAL, 2]),
    )?;

    // Exact moment battery over random families.
    let mut min_gap = f64::INFINITY;
    for family in 0..50u64 {
        let mut rng = seeding::stream(cfg.seed, &[TAG_MOMENT, family]);
        use rand::Rng;
        let n = rng.random_range(1..=10usize);
        let dim = rng.random_range(2..=6usize);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm: f64 = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
                let target = rng.random_range(0.05..1.0f64);
                raw.iter().map(|v| v * target / norm.max(1e-9)).collect()
            })
            .collect();
        for m in 1..=4u32 {
            min_gap = min_gap.min(concentration::moment_oracle(&xs, m)?.gap);
        }
    }
    let moment_pass = min_gap >= -1e-10;

    let pass = subexponential.pass && oliveira.pass && moment_pass;
    let report = SuiteReport { subexponential, oliveira, min_moment_gap: min_gap, moment_pass, pass };

    if let Some(dir) = &cfg.out {
        std::fs::create_dir_all(dir)?;
        report.subexponential.write_csv(&dir.join("tail_subexponential.csv"))?;
        report.oliveira.centered.write_csv(&dir.join("tail_oliveira_centered.csv"))?;
        report.oliveira.upper.write_csv(&dir.join("tail_oliveira_upper.csv"))?;
        let mut f = std::fs::File::create(dir.join("concentration_summary.txt"))?;
        writeln!(f, "subexponential_pass = {}", report.subexponential.pass)?;
        writeln!(f, "oliveira_pass = {}", report.oliveira.pass)?;
        writeln!(
            f,
            "oliveira_expectation = {} <= {}",
            report.oliveira.expectation.lhs, report.oliveira.expectation.rhs
        )?;
        writeln!(f, "min_moment_gap = {}", report.min_moment_gap)?;
        writeln!(f, "pass = {}", report.pass)?;
    }
    Ok(report)
}

/// CLI argument surface shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct CliArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub trials: Option<usize>,
}

impl CliArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trials = trials;
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn require_out(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg
        .out
        .clone()
        .ok_or_else(|| Error::InvalidConfig("an output directory is required (--out)".into()))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn dataset_path(cfg: &ExperimentConfig) -> Result<PathBuf> {
    if let Some(path) = &cfg.dataset {
        return Ok(path.clone());
    }
    if let Some(out) = &cfg.out {
        return Ok(out.join("dataset.csv"));
    }
    Err(Error::InvalidConfig("no dataset path: set `dataset =` in the config or pass --out".into()))
}

/// Writes a plain matrix CSV (rows of comma-separated floats).
fn write_matrix_csv(m: &crate::linop::Matrix, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|x| x.to_string()).collect();
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

/// `synth`: generate a dataset and its generating truth into the output
/// directory.
pub fn cmd_synth(args: &CliArgs) -> Result<i32> {
    let cfg = args.load()?;
    let dir = require_out(&cfg)?;
    let gen = cfg.generator(cfg.seed)?;
    let (dataset, truth) = gen.generate()?;
    dataset.write_csv(&dir.join("dataset.csv"))?;
    write_matrix_csv(truth.matrix(), &dir.join("ground_truth.csv"))?;
    println!(
        "synth: wrote {} tasks x {} samples (d = {}) to {}",
        dataset.task_count(),
        cfg.samples_per_task,
        dataset.dim(),
        dir.display()
    );
    Ok(0)
}

/// `train`: fit the trace-ball solver on a dataset CSV; writes the iteration
/// trace, the learned weights, and a summary.
pub fn cmd_train(args: &CliArgs) -> Result<i32> {
    let cfg = args.load()?;
    let dir = require_out(&cfg)?;
    let dataset = MultitaskDataset::read_csv(&dataset_path(&cfg)?)?;
    let fit = solver::solve_trace_ball(&dataset, &cfg.loss, cfg.b, &cfg.solver_config(cfg.seed))?;
    solver::write_trace_csv(&fit.trace, &dir.join("trace.csv"))?;
    write_matrix_csv(fit.weights.matrix(), &dir.join("weights.csv"))?;
    let weights = TaskWeights::from_sizes(&dataset.sizes())?;
    let summary = serde_json::json!({
        "objective": fit.objective,
        "certified_gap": fit.certified_gap,
        "iterations": fit.iterations,
        "trace_norm": solver::weighted_trace_norm(&fit.weights, &weights)?,
        "radius": cfg.b * (dataset.task_count() as f64).sqrt(),
        "nonsmooth_warning": fit.nonsmooth_warning,
    });
    std::fs::write(dir.join("train_summary.json"), serde_json::to_string_pretty(&summary).unwrap())?;
    println!(
        "train: objective {:.6}, certified gap {:.6}, {} iterations",
        fit.objective, fit.certified_gap, fit.iterations
    );
    Ok(0)
}

/// `bounds`: evaluate the closed-form bounds; the distribution-dependent one
/// from the generator geometry, the data-dependent one from a dataset when
/// available.
pub fn cmd_bounds(args: &CliArgs) -> Result<i32> {
    let cfg = args.load()?;
    let dir = require_out(&cfg)?;
    let lipschitz = cfg.loss.lipschitz();
    let gen = cfg.generator(cfg.seed)?;
    let analytic = bounds::analytic_covariance(&gen)?;
    let nbar = cfg.samples_per_task as f64;
    let report_i = bounds::distribution_bound(
        lipschitz,
        cfg.b,
        nbar,
        cfg.tasks,
        cfg.delta,
        analytic.spectral_norm(),
    )?;
    std::fs::write(dir.join("bound_distribution.json"), report_i.to_json())?;
    println!("bounds: distribution total {:.6}", report_i.total);

    let data_file = dataset_path(&cfg)?;
    if data_file.exists() {
        let dataset = MultitaskDataset::read_csv(&data_file)?;
        let chat = bounds::empirical_covariance(&dataset)?;
        let report_ii = bounds::empirical_bound(
            lipschitz,
            cfg.b,
            dataset.nbar(),
            dataset.task_count(),
            cfg.delta,
            chat.spectral_norm(),
        )?;
        std::fs::write(dir.join("bound_empirical.json"), report_ii.to_json())?;
        println!("bounds: empirical total {:.6}", report_ii.total);
    }
    let limit = bounds::subspace_limit_bound(lipschitz, cfg.subspace_dim, nbar, cfg.sphere_dim);
    println!("bounds: subspace limit {limit:.6}");
    Ok(0)
}

/// `concentration`: run the tail and moment batteries; exit code reflects the
/// pass flags.
pub fn cmd_concentration(args: &CliArgs) -> Result<i32> {
    let mut cfg = args.load()?;
    if let Some(trials) = args.trials {
        cfg.conc_trials = trials;
    }
    let report = concentration_suite(&cfg)?;
    println!(
        "concentration: subexponential tail {}, bounded tails {}, expectation {}, moments {} (min gap {:.3e})",
        pass_str(report.subexponential.pass),
        pass_str(report.oliveira.centered.pass && report.oliveira.upper.pass),
        pass_str(report.oliveira.expectation.pass),
        pass_str(report.moment_pass),
        report.min_moment_gap
    );
    Ok(if report.pass { 0 } else { 1 })
}

/// `sweep`: grid cross-product, one CSV row per cell per trial.
pub fn cmd_sweep(args: &CliArgs) -> Result<i32> {
    let cfg = args.load()?;
    let dir = require_out(&cfg)?;
    let rows = sweep(&cfg)?;
    write_sweep_csv(&rows, &dir.join("sweep.csv"))?;
    println!("sweep: wrote {} rows to {}", rows.len(), dir.join("sweep.csv").display());
    Ok(0)
}

/// `report`: run the configured trials, write per-trial records and the
/// aggregate, and assert the bound check when configured.
pub fn cmd_report(args: &CliArgs) -> Result<i32> {
    let cfg = args.load()?;
    require_out(&cfg)?;
    let record = run(&cfg)?;
    println!(
        "report: {} trials, mean excess {:.5}, mean bound {:.5}, violations {}",
        record.trials.len(),
        record.aggregate.mean_excess,
        record.aggregate.mean_bound_ii,
        record.aggregate.bound_violations
    );
    if cfg.assert_bounds && record.aggregate.bound_violations > 0 {
        println!("report: FAIL (excess + gap exceeded the bound in {} trials)", record.aggregate.bound_violations);
        return Ok(1);
    }
    Ok(0)
}

fn pass_str(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            dim: 8,
            sphere_dim: 8,
            subspace_dim: 2,
            tasks: 4,
            samples_per_task: 10,
            noise: 0.05,
            b: 2f64.sqrt(),
            max_iters: 200,
            heldout_samples: 2000,
            trials: 2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_round_trips_through_text() {
        let text = "\
# comment line
d = 12
sphere_dim = 6
subspace_dim = 3
tasks = 7
samples_per_task = 9
noise = 0.25
loss = clipped-squared
b = 1.75
delta = 0.07
method = frank-wolfe
max_iters = 321
t_grid = 5, 20, 80
";
        let cfg = ExperimentConfig::from_str_content(text, "inline").unwrap();
        assert_eq!(cfg.dim, 12);
        assert_eq!(cfg.sphere_dim, 6);
        assert_eq!(cfg.subspace_dim, 3);
        assert_eq!(cfg.tasks, 7);
        assert_eq!(cfg.samples_per_task, 9);
        assert_eq!(cfg.noise, 0.25);
        assert_eq!(cfg.loss, LossSpec::clipped_squared());
        assert_eq!(cfg.b, 1.75);
        assert_eq!(cfg.method, SolverMethod::FrankWolfe);
        assert_eq!(cfg.max_iters, 321);
        assert_eq!(cfg.t_grid, vec![5, 20, 80]);
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_str_content("bogus = 1\n", "x").is_err());
        assert!(ExperimentConfig::from_str_content("delta = 2.0\n", "x").is_err());
        assert!(ExperimentConfig::from_str_content("subspace_dim = 99\n", "x").is_err());
    }

    #[test]
    fn run_is_deterministic() {
        let cfg = small_config();
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn run_records_have_consistent_excess() {
        let cfg = small_config();
        let record = run(&cfg).unwrap();
        assert_eq!(record.trials.len(), 2);
        for t in &record.trials {
            let diff = (t.excess - (t.pop_risk - t.pop_risk_reference)).abs();
            assert!(diff < 1e-12);
            assert!(t.bound_i > 0.0 && t.bound_ii > 0.0);
            assert_eq!(t.reference, ReferenceProxy::GroundTruth);
        }
    }

    #[test]
    fn generous_b_keeps_excess_within_bound() {
        let mut cfg = small_config();
        cfg.noise = 0.0;
        cfg.b = 3.0;
        cfg.max_iters = 400;
        let record = run(&cfg).unwrap();
        for t in &record.trials {
            assert!(
                t.excess + t.solver_gap <= t.bound_ii,
                "trial {}: excess {} + gap {} vs bound {}",
                t.trial,
                t.excess,
                t.solver_gap,
                t.bound_ii
            );
        }
        assert_eq!(record.aggregate.bound_violations, 0);
    }

    #[test]
    fn distribution_bound_decreases_along_t_grid_toward_limit() {
        let cfg = small_config();
        let lipschitz = cfg.loss.lipschitz();
        let nbar = cfg.samples_per_task as f64;
        let c_norm = 1.0 / cfg.sphere_dim as f64;
        let limit = 2.0 * lipschitz * cfg.b * (c_norm / nbar).sqrt();
        let mut prev = f64::INFINITY;
        for &t in &[5usize, 20, 80] {
            let total = bounds::distribution_bound(lipschitz, cfg.b, nbar, t, cfg.delta, c_norm)
                .unwrap()
                .total;
            assert!(total < prev);
            assert!(total > limit);
            prev = total;
        }
    }

    #[test]
    fn sweep_single_cell_matches_run() {
        let mut cfg = small_config();
        cfg.trials = 1;
        let rows = sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 1);
        let run_record = run(&cfg).unwrap();
        assert_eq!(rows[0].record.excess, run_record.trials[0].excess);
        assert_eq!(rows[0].record.bound_ii, run_record.trials[0].bound_ii);
    }

    #[test]
    fn sweep_subspace_limit_column_matches_formula() {
        let mut cfg = small_config();
        cfg.trials = 1;
        cfg.k_grid = vec![1, 2];
        cfg.m_grid = vec![4, 8];
        let rows = sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        for row in &rows {
            let expected = 2.0
                * cfg.loss.lipschitz()
                * (row.subspace_dim as f64 / (row.nbar * row.sphere_dim as f64)).sqrt();
            assert!((row.subspace_limit - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_filters_inconsistent_cells_to_empty() {
        let mut cfg = small_config();
        cfg.trials = 1;
        cfg.k_grid = vec![6];
        cfg.m_grid = vec![3];
        let rows = sweep(&cfg).unwrap();
        assert!(rows.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.trim(), SWEEP_HEADER);
    }

    #[test]
    fn sweep_csv_has_declared_header() {
        let mut cfg = small_config();
        cfg.trials = 1;
        let rows = sweep(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), SWEEP_HEADER);
        let first = lines.next().unwrap();
        assert_eq!(first.split(',').count(), SWEEP_HEADER.split(',').count());
    }

    #[test]
    fn concentration_suite_small_battery_passes() {
        let mut cfg = small_config();
        cfg.conc_trials = 1500;
        cfg.conc_proj_dim = 8;
        cfg.conc_proj_count = 10;
        let report = concentration_suite(&cfg).unwrap();
        assert!(report.pass, "suite failed: moments gap {}", report.min_moment_gap);
    }

    #[test]
    fn concentration_suite_rejects_thin_trials() {
        let mut cfg = small_config();
        cfg.conc_trials = 100;
        assert!(matches!(concentration_suite(&cfg), Err(Error::TooFewTrials { .. })));
    }

    #[test]
    fn record_json_round_trip() {
        let cfg = small_config();
        let record = run(&cfg).unwrap();
        let back = ExperimentRecord::from_json(&record.to_json()).unwrap();
        assert_eq!(record.to_json(), back.to_json());
    }

    #[test]
    fn run_writes_record_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config();
        cfg.trials = 2;
        cfg.out = Some(dir.path().to_path_buf());
        run(&cfg).unwrap();
        assert!(dir.path().join("trial_000.json").exists());
        assert!(dir.path().join("trial_001.json").exists());
        assert!(dir.path().join("aggregate.json").exists());
    }
}
