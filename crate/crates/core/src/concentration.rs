//! Monte Carlo and exact verification of the operator-sum tail bounds and the
//! Rademacher-complexity chain behind the excess-risk bounds.
//!
//! Rademacher signs take values in `{-1, +1}` with equal probability
//! throughout; the symmetric convention is the one every downstream argument
//! (symmetrization, the cosh bound) actually uses.

use crate::data::MultitaskDataset;
use crate::error::{Error, Result};
use crate::linop::{self, Matrix, PsdOperator};
use crate::seeding;
use crate::solver::TaskWeights;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const TAG_TAIL: u64 = 0x7461_696c;
const TAG_CHAIN: u64 = 0x6368_6169;

/// Fewest Monte Carlo trials accepted by the tail verifiers.
pub const MIN_TRIALS: usize = 1000;

/// Conjugate exponents minimizing `sqrt(p a + q b)`: `p = 1 + sqrt(b/a)`,
/// `q = 1 + sqrt(a/b)`, attaining `sqrt(a) + sqrt(b)`.
pub fn conjugate_optimum(a: f64, b: f64) -> Result<(f64, f64, f64)> {
    let positive = |x: f64| x.is_finite() && x > 0.0;
    if !positive(a) || !positive(b) {
        return Err(Error::InvalidConfig(format!(
            "conjugate optimum needs positive arguments, got ({a}, {b})"
        )));
    }
    Ok((1.0 + (b / a).sqrt(), 1.0 + (a / b).sqrt(), a.sqrt() + b.sqrt()))
}

/// Exact moment check for the sign-weighted vector sum `V = sum_i sigma_i x_i`.
#[derive(Debug, Clone)]
pub struct MomentCheck {
    /// `E[(Q_V)^m]`, exact over all sign patterns.
    pub exact: PsdOperator,
    /// `m! (2 n b^2)^{m-1} E[Q_V]` with `b` the largest input norm.
    pub bound: PsdOperator,
    /// `psd_gap(exact, bound)`; nonnegative up to rounding when the moment
    /// inequality holds.
    pub gap: f64,
}

/// Largest family size the exact enumerator accepts.
pub const MOMENT_MAX_VECTORS: usize = 14;
/// Largest moment order the exact enumerator accepts.
pub const MOMENT_MAX_ORDER: u32 = 6;

/// Enumerates all `2^n` sign patterns to compute `E[(Q_V)^m]` exactly and
/// compares it against the subexponential moment bound.
pub fn moment_oracle(xs: &[Vec<f64>], m: u32) -> Result<MomentCheck> {
    if xs.is_empty() {
        return Err(Error::Empty("moment oracle needs at least one vector"));
    }
    let n = xs.len();
    if n > MOMENT_MAX_VECTORS {
        return Err(Error::InvalidConfig(format!(
            "moment oracle enumerates 2^n patterns; n = {n} exceeds {MOMENT_MAX_VECTORS}"
        )));
    }
    if m == 0 || m > MOMENT_MAX_ORDER {
        return Err(Error::InvalidConfig(format!(
            "moment order must be in 1..={MOMENT_MAX_ORDER}, got {m}"
        )));
    }
    let dim = xs[0].len();
    if dim == 0 || xs.iter().any(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: xs.iter().map(|x| x.len()).find(|&l| l != dim).unwrap_or(0),
        });
    }
    let b = xs
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);

    let patterns = 1usize << n;
    let weight = 1.0 / patterns as f64;
    let mut exact = PsdOperator::zeros(dim);
    let mut first = PsdOperator::zeros(dim);
    let mut v = vec![0.0; dim];
    for mask in 0..patterns {
        v.iter_mut().for_each(|x| *x = 0.0);
        for (i, x) in xs.iter().enumerate() {
            let sign = if mask >> i & 1 == 1 { 1.0 } else { -1.0 };
            for (acc, &xv) in v.iter_mut().zip(x) {
                *acc += sign * xv;
            }
        }
        let norm_sq: f64 = v.iter().map(|x| x * x).sum();
        // (Q_V)^m = |V|^{2(m-1)} Q_V.
        exact.add_scaled_rank_one(weight * norm_sq.powi(m as i32 - 1), &v);
        first.add_scaled_rank_one(weight, &v);
    }
    let mut factorial = 1.0;
    for i in 2..=m as u64 {
        factorial *= i as f64;
    }
    let scale = factorial * (2.0 * n as f64 * b * b).powi(m as i32 - 1);
    let bound = first.scale(scale);
    let gap = linop::psd_gap(&exact, &bound)?;
    Ok(MomentCheck { exact, bound, gap })
}

/// Draws sums of independent PSD operators.
#[derive(Debug, Clone)]
pub enum OperatorSampler {
    /// One operator per task: `Q_{V_t}` with
    /// `V_t = sum_i sigma_i^t x_i^t / (s_t n_t)`.
    RademacherRankOne {
        /// Input vectors per task.
        vectors: Vec<Vec<Vec<f64>>>,
        weights: TaskWeights,
        dim: usize,
    },
    /// `count` i.i.d. rank-one projections `Q_X` with `X` uniform on the unit
    /// sphere of `R^dim`; each satisfies `0 <= A_k <= I`.
    BoundedPsd { dim: usize, count: usize },
    /// A deterministic list, for degenerate checks.
    Fixed { ops: Vec<PsdOperator> },
}

impl OperatorSampler {
    /// Rank-one Rademacher family over the dataset's inputs with the weights
    /// implied by its sample sizes.
    pub fn rademacher_rank_one(data: &MultitaskDataset) -> Result<Self> {
        let weights = TaskWeights::from_sizes(&data.sizes())?;
        let vectors = data
            .tasks()
            .iter()
            .map(|task| (0..task.len()).map(|i| task.input(i).to_vec()).collect())
            .collect();
        Ok(Self::RademacherRankOne { vectors, weights, dim: data.dim() })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::RademacherRankOne { dim, .. } | Self::BoundedPsd { dim, .. } => *dim,
            Self::Fixed { ops } => ops.first().map(|o| o.dim()).unwrap_or(0),
        }
    }

    /// Number of independent operators per draw.
    pub fn count(&self) -> usize {
        match self {
            Self::RademacherRankOne { vectors, .. } => vectors.len(),
            Self::BoundedPsd { count, .. } => *count,
            Self::Fixed { ops } => ops.len(),
        }
    }

    /// The subexponential scale `R` under which the moment condition holds:
    /// `2 / nbar` for the rank-one Rademacher family.
    pub fn subexponential_scale(&self) -> Option<f64> {
        match self {
            Self::RademacherRankOne { vectors, .. } => {
                let nbar = vectors.iter().map(|v| v.len()).sum::<usize>() as f64
                    / vectors.len() as f64;
                Some(2.0 / nbar)
            }
            _ => None,
        }
    }

    /// One draw of `sum_k A_k`.
    pub fn sample_sum(&self, rng: &mut ChaCha8Rng) -> PsdOperator {
        match self {
            Self::RademacherRankOne { vectors, weights, dim } => {
                let mut sum = PsdOperator::zeros(*dim);
                let mut v = vec![0.0; *dim];
                for (t, task) in vectors.iter().enumerate() {
                    let coeff = 1.0 / (weights.get(t) * task.len() as f64);
                    v.iter_mut().for_each(|x| *x = 0.0);
                    for x in task {
                        let sign: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        for (acc, &xv) in v.iter_mut().zip(x) {
                            *acc += sign * coeff * xv;
                        }
                    }
                    sum.add_scaled_rank_one(1.0, &v);
                }
                sum
            }
            Self::BoundedPsd { dim, count } => {
                let mut sum = PsdOperator::zeros(*dim);
                for _ in 0..*count {
                    let x = sphere_point(rng, *dim);
                    sum.add_scaled_rank_one(1.0, &x);
                }
                sum
            }
            Self::Fixed { ops } => {
                let mut sum = PsdOperator::zeros(self.dim());
                for op in ops {
                    sum = sum.add(op).expect("uniform dimensions");
                }
                sum
            }
        }
    }

    /// `E sum_k A_k` in closed form.
    pub fn expected_sum(&self) -> PsdOperator {
        match self {
            Self::RademacherRankOne { vectors, weights, dim } => {
                let mut sum = PsdOperator::zeros(*dim);
                for (t, task) in vectors.iter().enumerate() {
                    let coeff = 1.0 / (weights.get(t) * task.len() as f64);
                    for x in task {
                        sum.add_scaled_rank_one(coeff * coeff, x);
                    }
                }
                sum
            }
            Self::BoundedPsd { dim, count } => {
                PsdOperator::identity(*dim).scale(*count as f64 / *dim as f64)
            }
            Self::Fixed { ops } => {
                let mut sum = PsdOperator::zeros(self.dim());
                for op in ops {
                    sum = sum.add(op).expect("uniform dimensions");
                }
                sum
            }
        }
    }
}

fn sphere_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    use rand_distr::StandardNormal;
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// One tail grid point: empirical exceedance with binomial noise against the
/// theoretical bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailRow {
    pub s: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Monte Carlo tail verification across an `s`-grid; passes when the
/// 3-sigma-corrected exceedance stays below the bound at every point.
#[derive(Debug, Clone)]
pub struct TailReport {
    pub rows: Vec<TailRow>,
    pub pass: bool,
}

impl TailReport {
    fn from_stats(stats: &[f64], grid: &[f64], threshold: impl Fn(f64) -> f64, bound: impl Fn(f64) -> f64) -> Self {
        let trials = stats.len() as f64;
        let rows: Vec<TailRow> = grid
            .iter()
            .map(|&s| {
                let cut = threshold(s);
                let count = stats.iter().filter(|&&x| x > cut).count();
                let empirical = count as f64 / trials;
                let stderr = (empirical * (1.0 - empirical) / trials).sqrt();
                let b = bound(s);
                TailRow { s, empirical, stderr, bound: b, pass: empirical - 3.0 * stderr <= b }
            })
            .collect();
        let pass = rows.iter().all(|r| r.pass);
        Self { rows, pass }
    }

    /// Writes the `s,empirical,stderr,bound,pass` format.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "s,empirical,stderr,bound,pass")?;
        for r in &self.rows {
            writeln!(f, "{},{},{},{},{}", r.s, r.empirical, r.stderr, r.bound, r.pass)?;
        }
        Ok(())
    }
}

/// Geometric 12-point grid spanning `[0.01, 10] * scale`, probing both the
/// near-certain and deep-tail regimes.
pub fn default_s_grid(scale: f64) -> Vec<f64> {
    let points = 12i32;
    let lo = 0.01 * scale;
    let hi = 10.0 * scale;
    let ratio = (hi / lo).powf(1.0 / (points as f64 - 1.0));
    (0..points).map(|k| lo * ratio.powi(k)).collect()
}

fn collect_stats(
    sampler: &OperatorSampler,
    trials: usize,
    seed: u64,
    stat: impl Fn(&PsdOperator) -> f64 + Sync,
) -> Vec<f64> {
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeding::stream(seed, &[TAG_TAIL, i as u64]);
            stat(&sampler.sample_sum(&mut rng))
        })
        .collect()
}

fn check_trials(trials: usize) -> Result<()> {
    if trials < MIN_TRIALS {
        return Err(Error::TooFewTrials { requested: trials, floor: MIN_TRIALS });
    }
    Ok(())
}

fn check_p(p: f64) -> Result<f64> {
    if p.is_nan() || p <= 1.0 {
        return Err(Error::InvalidConfig(format!("conjugate exponent p must exceed 1, got {p}")));
    }
    Ok(p / (p - 1.0))
}

/// Verifies the subexponential tail bound
/// `Pr{ ||sum A_k|| > p ||E sum A_k|| + s } <= span_dim exp(-s / (q R))`
/// for a sampler whose operators satisfy the moment condition at scale `r`.
///
/// `span_dim` is the dimension of a subspace containing every operator range;
/// the mean `||E sum A_k||` comes from the sampler's closed form.
pub fn verify_subexponential_tail(
    sampler: &OperatorSampler,
    span_dim: usize,
    r: f64,
    p: f64,
    s_grid: &[f64],
    trials: usize,
    seed: u64,
) -> Result<TailReport> {
    check_trials(trials)?;
    let q = check_p(p)?;
    if r.is_nan() || r <= 0.0 {
        return Err(Error::InvalidConfig("subexponential scale R must be positive".into()));
    }
    if s_grid.is_empty() {
        return Err(Error::Empty("s grid"));
    }
    let mu = sampler.expected_sum().max_eigenvalue().max(0.0);
    let stats = collect_stats(sampler, trials, seed, |sum| sum.max_eigenvalue());
    let dim_f = span_dim as f64;
    Ok(TailReport::from_stats(
        &stats,
        s_grid,
        |s| p * mu + s,
        |s| dim_f * (-s / (q * r)).exp(),
    ))
}

/// The Monte Carlo side of the expectation inequality
/// `sqrt(E ||sum A_k||) <= sqrt(||E sum A_k||) + sqrt(6 (ln(4 d^2) + 1))`.
#[derive(Debug, Clone, Copy)]
pub struct ExpectationCheck {
    pub mean_norm: f64,
    pub stderr: f64,
    /// `sqrt(mean - 3 stderr)`, the noise-protected left side.
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Tail and expectation verification for sums of independent operators with
/// `0 <= A_k <= I` whose ranges span at most `d_bound` dimensions.
#[derive(Debug, Clone)]
pub struct OliveiraReport {
    /// Centered tail `Pr{||sum (A_k - E A_k)|| > s} <= 4 d^2 exp(-s^2 / (9 mu + 6 s))`.
    pub centered: TailReport,
    /// Upper tail `Pr{||sum A_k|| > p mu + s} <= 4 d^2 exp(-s / (6 q))`.
    pub upper: TailReport,
    pub expectation: ExpectationCheck,
    pub pass: bool,
}

/// Runs all three checks from one set of Monte Carlo draws. A `None` grid
/// picks per-variant geometric defaults.
pub fn verify_oliveira(
    sampler: &OperatorSampler,
    d_bound: usize,
    p: f64,
    s_grid: Option<&[f64]>,
    trials: usize,
    seed: u64,
) -> Result<OliveiraReport> {
    check_trials(trials)?;
    let q = check_p(p)?;
    if d_bound == 0 {
        return Err(Error::InvalidConfig("span bound d must be positive".into()));
    }
    let expected = sampler.expected_sum();
    let mu = expected.max_eigenvalue().max(0.0);
    let d_f = d_bound as f64;
    let prefactor = 4.0 * d_f * d_f;
    let log_pref = prefactor.ln();

    // stats: (centered norm, upper norm) per trial.
    let stats: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeding::stream(seed, &[TAG_TAIL, i as u64]);
            let sum = sampler.sample_sum(&mut rng);
            let centered = sum.sub(&expected).expect("same dim").spectral_norm();
            (centered, sum.max_eigenvalue())
        })
        .collect();
    let centered_stats: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let upper_stats: Vec<f64> = stats.iter().map(|s| s.1).collect();

    // Natural scales where each bound crosses 1.
    let centered_scale = 3.0 * log_pref + 3.0 * (log_pref * log_pref + mu * log_pref).sqrt();
    let upper_scale = 6.0 * q * log_pref;
    let centered_grid: Vec<f64> = match s_grid {
        Some(g) => g.to_vec(),
        None => default_s_grid(centered_scale),
    };
    let upper_grid: Vec<f64> = match s_grid {
        Some(g) => g.to_vec(),
        None => default_s_grid(upper_scale),
    };

    let centered = TailReport::from_stats(
        &centered_stats,
        &centered_grid,
        |s| s,
        |s| prefactor * (-(s * s) / (9.0 * mu + 6.0 * s)).exp(),
    );
    let upper = TailReport::from_stats(
        &upper_stats,
        &upper_grid,
        |s| p * mu + s,
        |s| prefactor * (-s / (6.0 * q)).exp(),
    );

    let n = trials as f64;
    let mean_norm = upper_stats.iter().sum::<f64>() / n;
    let var = upper_stats.iter().map(|x| (x - mean_norm).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let stderr = (var / n).sqrt();
    let rhs = mu.sqrt() + (6.0 * (prefactor.ln() + 1.0)).sqrt();
    let lhs = (mean_norm - 3.0 * stderr).max(0.0).sqrt();
    let expectation = ExpectationCheck { mean_norm, stderr, lhs, rhs, pass: lhs <= rhs };

    let pass = centered.pass && upper.pass && expectation.pass;
    Ok(OliveiraReport { centered, upper, expectation, pass })
}

/// Monte Carlo estimate of the trace-ball Rademacher complexity with its
/// exact per-draw supremum, checked against the closed-form bound.
#[derive(Debug, Clone, Copy)]
pub struct ChainReport {
    /// Mean of `(2 L B / sqrt(T)) ||S^{-1} D||` over draws.
    pub estimate: f64,
    pub stderr: f64,
    /// `2 L B (sqrt(||Chat||/nbar) + sqrt(2 (ln(nbar T) + 1) / (nbar T)))`.
    pub rhs: f64,
    /// Largest per-draw violation of `||S^{-1} D||^2 = ||sum_t Q_{V_t}||`.
    pub max_identity_violation: f64,
    pub identity_pass: bool,
    pub bound_pass: bool,
    pub draws: usize,
}

/// For each sign draw computes the exact linear-class supremum
/// `sup { tr(W^T D) : ||S W||_1 <= B sqrt(T) } = B sqrt(T) ||S^{-1} D||`,
/// averages the resulting complexity estimate, and certifies both the
/// operator identity behind it and the closed-form upper bound.
pub fn rademacher_chain(
    data: &MultitaskDataset,
    b: f64,
    lipschitz: f64,
    draws: usize,
    seed: u64,
) -> Result<ChainReport> {
    if draws == 0 {
        return Err(Error::InvalidConfig("at least one draw is required".into()));
    }
    let positive = |x: f64| x.is_finite() && x > 0.0;
    if !positive(b) || !positive(lipschitz) {
        return Err(Error::InvalidConfig("B and L must be positive".into()));
    }
    let weights = TaskWeights::from_sizes(&data.sizes())?;
    let t_count = data.task_count();
    let dim = data.dim();
    let nbar = data.nbar();

    let per_draw: Vec<(f64, f64)> = (0..draws)
        .into_par_iter()
        .map(|k| {
            let mut rng = seeding::stream(seed, &[TAG_CHAIN, k as u64]);
            // Columns of S^{-1} D: V_t = sum_i sigma_i^t x_i^t / (s_t n_t).
            let mut scaled = Matrix::zeros(dim, t_count);
            for (t, task) in data.tasks().iter().enumerate() {
                let coeff = 1.0 / (weights.get(t) * task.len() as f64);
                for i in 0..task.len() {
                    let sign: f64 = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    for (row, &xv) in task.input(i).iter().enumerate() {
                        let cur = scaled.get(row, t);
                        scaled.set(row, t, cur + sign * coeff * xv);
                    }
                }
            }
            let sup_norm = linop::spectral_norm(&scaled).expect("finite scaled sign matrix");
            // Independent route: the Gram identity through sum_t Q_{V_t}.
            let mut gram_sum = PsdOperator::zeros(dim);
            for t in 0..t_count {
                gram_sum.add_scaled_rank_one(1.0, &scaled.column(t));
            }
            let violation = (sup_norm * sup_norm - gram_sum.max_eigenvalue()).abs();
            (sup_norm, violation)
        })
        .collect();

    let front = 2.0 * lipschitz * b;
    let scale = front / (t_count as f64).sqrt();
    let values: Vec<f64> = per_draw.iter().map(|(s, _)| scale * s).collect();
    let n = draws as f64;
    let estimate = values.iter().sum::<f64>() / n;
    let var = if draws > 1 {
        values.iter().map(|v| (v - estimate).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let stderr = (var / n).sqrt();
    let max_identity_violation = per_draw.iter().map(|(_, v)| *v).fold(0.0f64, f64::max);

    let chat_norm = crate::bounds::empirical_covariance(data)?.spectral_norm();
    let nt = nbar * t_count as f64;
    let rhs = front * ((chat_norm / nbar).sqrt() + (2.0 * (nt.ln() + 1.0) / nt).sqrt());

    Ok(ChainReport {
        estimate,
        stderr,
        rhs,
        max_identity_violation,
        identity_pass: max_identity_violation < 1e-8,
        bound_pass: estimate <= rhs + 3.0 * stderr,
        draws,
    })
}

/// Closed-form nonnegative test distributions for the partial-integration
/// lemma.
#[derive(Debug, Clone, Copy)]
pub enum TailDistribution {
    /// Point mass at `value`.
    Constant(f64),
    /// `shift + Exp(mean)`.
    ShiftedExponential { shift: f64, mean: f64 },
}

impl TailDistribution {
    pub fn tail(&self, x: f64) -> f64 {
        match *self {
            Self::Constant(v) => {
                if x < v {
                    1.0
                } else {
                    0.0
                }
            }
            Self::ShiftedExponential { shift, mean } => {
                if x <= shift {
                    1.0
                } else {
                    (-(x - shift) / mean).exp()
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Constant(v) => v,
            Self::ShiftedExponential { shift, mean } => shift + mean,
        }
    }
}

/// Checks `sqrt(E X) <= sqrt(a) + sqrt(c (ln b + 1))` for a distribution
/// satisfying the tail hypothesis `Pr{X > p a + s} <= b exp(-s/(c q))`.
///
/// The hypothesis is spot-checked over a grid of conjugate pairs and offsets;
/// a violation means the lemma does not apply to the supplied distribution
/// and surfaces as an error rather than a failed conclusion.
pub fn partial_integration_check(
    a: f64,
    c: f64,
    b_param: f64,
    dist: &TailDistribution,
) -> Result<bool> {
    if a.is_nan() || a < 0.0 || c.is_nan() || c <= 0.0 || b_param.is_nan() || b_param < 1.0 {
        return Err(Error::InvalidConfig(format!(
            "need a >= 0, c > 0, b >= 1; got a = {a}, c = {c}, b = {b_param}"
        )));
    }
    let p_grid = [1.05, 1.2, 1.5, 2.0, 3.0, 6.0];
    for &p in &p_grid {
        let q = p / (p - 1.0);
        for k in 0..40 {
            let s = if k == 0 { 0.0 } else { c * q * 0.02 * 1.35f64.powi(k) };
            let observed = dist.tail(p * a + s);
            let allowed = b_param * (-s / (c * q)).exp();
            if observed > allowed + 1e-12 {
                return Err(Error::HypothesisViolated { p, s, observed, allowed });
            }
        }
    }
    let lhs = dist.mean().sqrt();
    let rhs = a.sqrt() + (c * (b_param.ln() + 1.0)).sqrt();
    Ok(lhs <= rhs + 1e-12)
}
