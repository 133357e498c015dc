//! Experiment runners: trial-averaged convergence curves, the rank sweep, and
//! empirical checks of the convergence bounds.
//!
//! Trials run in parallel but each trial owns its generators, and every
//! reduction walks trials in index order, so results are bit-reproducible.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::env::{self, EnvError, GroundTruth, MultiTaskMdp};
use crate::learner::{
    self, FeatureModel, LearnerError, ScheduleKind, StepSchedule, ValueMatrix, DIVERGENCE_FACTOR,
};
use crate::linalg::{self, LinalgError, Matrix};

/// Minimum number of trials used to estimate expectations in [`verify_bounds`].
pub const MIN_BOUND_TRIALS: usize = 20;
/// Largest row-space residual accepted by [`BoundReport::passed`].
pub const LEMMA1_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Tsvd,
    Td,
    FeatureTd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Tsvd, Algorithm::Td, Algorithm::FeatureTd];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Tsvd => "tsvd",
            Algorithm::Td => "td",
            Algorithm::FeatureTd => "feature-td",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "tsvd" => Ok(Algorithm::Tsvd),
            "td" => Ok(Algorithm::Td),
            "feature-td" => Ok(Algorithm::FeatureTd),
            other => Err(format!("unknown algorithm `{other}` (expected tsvd, td or feature-td)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("{abort}")]
    Aborted {
        abort: Abort,
        /// Trial-averaged records for the iterations every trial completed.
        partial: Vec<AlgorithmRun>,
    },
}

/// Where and why a run stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct Abort {
    pub algorithm: Algorithm,
    pub trial: usize,
    pub iteration: u64,
    pub cause: LearnerError,
}

impl fmt::Display for Abort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} aborted in trial {} at iteration {}: {}",
            self.algorithm, self.trial, self.iteration, self.cause
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceConfig {
    pub states: usize,
    pub tasks: usize,
    pub rank: usize,
    pub trunc_k: usize,
    pub gamma: f64,
    pub iters: u64,
    pub trials: usize,
    pub seed: u64,
    pub schedule: ScheduleKind,
    pub noise_halfwidth: f64,
    pub algorithms: Vec<Algorithm>,
    pub divergence_factor: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            states: 200,
            tasks: 40,
            rank: 8,
            trunc_k: 9,
            gamma: 0.95,
            iters: 5000,
            trials: 5,
            seed: 1,
            schedule: ScheduleKind::Simple,
            noise_halfwidth: 0.0,
            algorithms: Algorithm::ALL.to_vec(),
            divergence_factor: DIVERGENCE_FACTOR,
        }
    }
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::Config(msg));
        if self.states == 0 || self.tasks == 0 {
            return bad(format!("states ({}) and tasks ({}) must be positive", self.states, self.tasks));
        }
        let max_rank = self.states.min(self.tasks);
        if self.rank < 1 || self.rank > max_rank {
            return bad(format!(
                "rank {} must lie in [1, min(states, tasks)] = [1, {max_rank}]",
                self.rank
            ));
        }
        if self.trunc_k < self.rank || self.trunc_k > self.tasks {
            return bad(format!(
                "trunc-k {} must lie in [rank, tasks] = [{}, {}]",
                self.trunc_k, self.rank, self.tasks
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} must lie in [0, 1)", self.gamma));
        }
        if self.trials < 1 {
            return bad("trials must be at least 1".into());
        }
        if !(self.noise_halfwidth >= 0.0 && self.noise_halfwidth.is_finite()) {
            return bad(format!("noise {} must be finite and nonnegative", self.noise_halfwidth));
        }
        if self.algorithms.is_empty() {
            return bad("at least one algorithm is required".into());
        }
        if !(self.divergence_factor > 0.0) {
            return bad(format!("divergence factor {} must be positive", self.divergence_factor));
        }
        Ok(())
    }

    pub fn step_schedule(&self) -> StepSchedule {
        match self.schedule {
            ScheduleKind::Theory => StepSchedule::theory(self.gamma),
            ScheduleKind::Simple => StepSchedule::simple(),
        }
    }
}

/// Trial-averaged metrics at one iteration. `mse` and `misalignment` are
/// normalized by `dN`; `noise_norm_sq` and `step` describe the update applied
/// to this iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRecord {
    pub iteration: u64,
    pub mse: f64,
    pub misalignment: f64,
    pub noise_norm_sq: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmRun {
    pub algorithm: Algorithm,
    pub records: Vec<RunRecord>,
}

/// Un-normalized per-iteration metrics of a single chain.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct RawMetrics {
    error_sq: f64,
    misalignment_sq: f64,
    noise_sq: f64,
    step: f64,
}

/// Learner state for one algorithm within a trial.
enum Chain {
    Tabular { algorithm: Algorithm, value: ValueMatrix },
    Features(FeatureModel),
}

impl Chain {
    fn algorithm(&self) -> Algorithm {
        match self {
            Chain::Tabular { algorithm, .. } => *algorithm,
            Chain::Features(_) => Algorithm::FeatureTd,
        }
    }

    fn value(&self) -> Matrix {
        match self {
            Chain::Tabular { value, .. } => value.values().clone(),
            Chain::Features(model) => model.implied_value(),
        }
    }
}

struct Problem<'a> {
    mdp: &'a MultiTaskMdp,
    gt: &'a GroundTruth,
    features: Option<&'a Matrix>,
    trunc_k: usize,
    iters: u64,
    schedule: StepSchedule,
    noise_halfwidth: f64,
    seed: u64,
    divergence_factor: f64,
    record: bool,
}

struct TrialOutcome {
    metrics: Vec<Vec<RawMetrics>>,
    finals: Vec<Matrix>,
    abort: Option<Abort>,
}

fn bootstrap_target(chain: &Chain, trunc_k: usize) -> Result<Matrix, LearnerError> {
    match chain {
        Chain::Tabular {
            algorithm: Algorithm::Tsvd,
            value,
        } => learner::projected_target(value, trunc_k),
        Chain::Tabular { value, .. } => Ok(value.values().clone()),
        Chain::Features(model) => Ok(model.implied_value()),
    }
}

fn advance(
    chain: &Chain,
    target: &Matrix,
    batch: &env::SampleBatch,
    mdp: &MultiTaskMdp,
    alpha: f64,
) -> Result<Chain, LearnerError> {
    Ok(match chain {
        Chain::Tabular { algorithm, value } => Chain::Tabular {
            algorithm: *algorithm,
            value: learner::apply_td_update(value, target, batch, mdp, alpha)?,
        },
        Chain::Features(model) => Chain::Features(learner::feature_td_step(model, batch, mdp, alpha)?),
    })
}

/// Runs every algorithm in lockstep on one shared sample stream.
fn run_trial(problem: &Problem<'_>, algorithms: &[Algorithm], trial: usize) -> TrialOutcome {
    let mdp = problem.mdp;
    let gt = problem.gt;
    let init_seed = env::derive_seed(problem.seed, &[trial as u64]);
    let initial = learner::initialize_value(gt, init_seed);
    let reference_norm = gt.value.norm();

    let mut chains: Vec<Chain> = algorithms
        .iter()
        .map(|&algorithm| match algorithm {
            Algorithm::FeatureTd => Chain::Features(
                FeatureModel::from_value(
                    problem.features.expect("features prepared for feature-td").clone(),
                    &initial,
                )
                .expect("features are orthonormal"),
            ),
            _ => Chain::Tabular {
                algorithm,
                value: initial.clone(),
            },
        })
        .collect();
    let capacity = if problem.record { problem.iters as usize + 1 } else { 0 };
    let mut metrics = vec![Vec::with_capacity(capacity); algorithms.len()];
    let mut abort = None;

    'outer: for t in 0..=problem.iters {
        let alpha = problem.schedule.at(t);
        let mut rng = env::sample_rng(problem.seed, trial as u64, t);
        let batch = env::sample_batch(mdp, problem.noise_halfwidth, &mut rng)
            .expect("noise validated by caller");
        let last = t == problem.iters;

        let mut targets = Vec::with_capacity(chains.len());
        for chain in &chains {
            let target = match bootstrap_target(chain, problem.trunc_k) {
                Ok(g) => g,
                Err(cause) => {
                    abort = Some(Abort {
                        algorithm: chain.algorithm(),
                        trial,
                        iteration: t,
                        cause,
                    });
                    break 'outer;
                }
            };
            targets.push(target);
        }
        if problem.record {
            for (idx, (chain, target)) in chains.iter().zip(&targets).enumerate() {
                let value = chain.value();
                let noise = learner::noise_matrix(target, &batch, mdp).expect("shapes checked");
                metrics[idx].push(RawMetrics {
                    error_sq: (&value - &gt.value).norm_squared(),
                    misalignment_sq: linalg::misalignment(&value, &gt.complement)
                        .expect("shapes checked"),
                    noise_sq: noise.norm_squared(),
                    step: alpha,
                });
            }
        }
        if last {
            break;
        }
        for (idx, target) in targets.iter().enumerate() {
            let chain = &chains[idx];
            let stepped = advance(chain, target, &batch, mdp, alpha).and_then(|c| {
                learner::check_divergence(&c.value(), reference_norm, problem.divergence_factor)?;
                Ok(c)
            });
            match stepped {
                Ok(c) => chains[idx] = c,
                Err(cause) => {
                    abort = Some(Abort {
                        algorithm: chain.algorithm(),
                        trial,
                        iteration: t + 1,
                        cause,
                    });
                    break 'outer;
                }
            }
        }
    }

    let finals = if abort.is_none() {
        chains.iter().map(Chain::value).collect()
    } else {
        Vec::new()
    };
    TrialOutcome {
        metrics,
        finals,
        abort,
    }
}

/// Mean over trials (in trial order) of the first `len` records of each
/// algorithm.
fn average_metrics(outcomes: &[TrialOutcome], n_algos: usize, len: usize) -> Vec<Vec<RawMetrics>> {
    let count = outcomes.len() as f64;
    (0..n_algos)
        .map(|a| {
            (0..len)
                .map(|t| {
                    let mut acc = RawMetrics::default();
                    for outcome in outcomes {
                        let m = outcome.metrics[a][t];
                        acc.error_sq += m.error_sq;
                        acc.misalignment_sq += m.misalignment_sq;
                        acc.noise_sq += m.noise_sq;
                    }
                    RawMetrics {
                        error_sq: acc.error_sq / count,
                        misalignment_sq: acc.misalignment_sq / count,
                        noise_sq: acc.noise_sq / count,
                        step: outcomes[0].metrics[a][t].step,
                    }
                })
                .collect()
        })
        .collect()
}

fn to_runs(algorithms: &[Algorithm], averaged: Vec<Vec<RawMetrics>>, cells: f64) -> Vec<AlgorithmRun> {
    algorithms
        .iter()
        .zip(averaged)
        .map(|(&algorithm, series)| AlgorithmRun {
            algorithm,
            records: series
                .into_iter()
                .enumerate()
                .map(|(t, m)| RunRecord {
                    iteration: t as u64,
                    mse: m.error_sq / cells,
                    misalignment: m.misalignment_sq / cells,
                    noise_norm_sq: m.noise_sq,
                    step: m.step,
                })
                .collect(),
        })
        .collect()
}

/// Top-k left singular vectors of `V_*`, the frozen features of feature-TD.
fn feature_matrix(gt: &GroundTruth, k: usize) -> Result<Matrix, ExperimentError> {
    Ok(linalg::truncated_svd(&gt.value, k)?.left_factors)
}

fn run_trials(
    problem: &Problem<'_>,
    algorithms: &[Algorithm],
    trials: usize,
) -> Result<Vec<TrialOutcome>, (Abort, Vec<TrialOutcome>)> {
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|trial| run_trial(problem, algorithms, trial))
        .collect();
    match outcomes.iter().filter_map(|o| o.abort.clone()).next() {
        Some(abort) => Err((abort, outcomes)),
        None => Ok(outcomes),
    }
}

/// Shared setup of a convergence-style experiment.
struct Prepared {
    mdp: MultiTaskMdp,
    gt: GroundTruth,
    features: Option<Matrix>,
}

fn prepare(config: &ConvergenceConfig) -> Result<Prepared, ExperimentError> {
    config.validate()?;
    let mdp = env::generate_mdp(config.states, config.tasks, config.rank, config.gamma, config.seed)?;
    let gt = env::exact_value(&mdp)?;
    let features = if config.algorithms.contains(&Algorithm::FeatureTd) {
        if config.trunc_k > config.states {
            return Err(ExperimentError::Config(format!(
                "feature-td needs trunc-k ({}) <= states ({})",
                config.trunc_k, config.states
            )));
        }
        Some(feature_matrix(&gt, config.trunc_k)?)
    } else {
        None
    };
    Ok(Prepared { mdp, gt, features })
}

/// Trial-averaged convergence curves (iterations `0..=T`) for each requested
/// algorithm, all algorithms sharing one MDP and per-trial sample streams.
pub fn run_convergence(config: &ConvergenceConfig) -> Result<Vec<AlgorithmRun>, ExperimentError> {
    let prepared = prepare(config)?;
    let problem = Problem {
        mdp: &prepared.mdp,
        gt: &prepared.gt,
        features: prepared.features.as_ref(),
        trunc_k: config.trunc_k,
        iters: config.iters,
        schedule: config.step_schedule(),
        noise_halfwidth: config.noise_halfwidth,
        seed: config.seed,
        divergence_factor: config.divergence_factor,
        record: true,
    };
    let cells = (config.states * config.tasks) as f64;
    let algos = &config.algorithms;
    match run_trials(&problem, algos, config.trials) {
        Ok(outcomes) => {
            let len = config.iters as usize + 1;
            Ok(to_runs(algos, average_metrics(&outcomes, algos.len(), len), cells))
        }
        Err((abort, outcomes)) => {
            // All chains of a trial record before any of them steps, so the
            // record counts agree across algorithms.
            let len = outcomes.iter().map(|o| o.metrics[0].len()).min().unwrap_or(0);
            let partial = to_runs(algos, average_metrics(&outcomes, algos.len(), len), cells);
            Err(ExperimentError::Aborted { abort, partial })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub states: usize,
    pub tasks: usize,
    pub gamma: f64,
    pub iters: u64,
    pub trials: usize,
    pub seed: u64,
    pub schedule: ScheduleKind,
    pub noise_halfwidth: f64,
    pub ranks: Vec<usize>,
    pub divergence_factor: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            states: 150,
            tasks: 30,
            gamma: 0.95,
            iters: 10_000,
            trials: 10,
            seed: 1,
            schedule: ScheduleKind::Simple,
            noise_halfwidth: 0.0,
            ranks: vec![2, 6, 10, 14, 18, 22, 26, 30],
            divergence_factor: DIVERGENCE_FACTOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSweepRecord {
    pub rank: usize,
    /// `‖V̄_T − V̂̄_T‖_F² / (dN)` between trial-averaged TSVD and TD iterates.
    pub gap_mse: f64,
}

/// Truncation used by the sweep for rank `r`: one extra direction, capped at N.
pub fn sweep_truncation(rank: usize, tasks: usize) -> usize {
    (rank + 1).min(tasks)
}

/// Final-iterate gap between TSVD and tabular TD across ranks; one fresh MDP
/// per rank. Output is sorted by rank with duplicates removed.
pub fn run_rank_sweep(config: &SweepConfig) -> Result<Vec<RankSweepRecord>, ExperimentError> {
    let mut ranks = config.ranks.clone();
    ranks.sort_unstable();
    ranks.dedup();
    if ranks.is_empty() {
        return Err(ExperimentError::Config("at least one rank is required".into()));
    }
    for &r in &ranks {
        ConvergenceConfig {
            states: config.states,
            tasks: config.tasks,
            rank: r,
            trunc_k: sweep_truncation(r, config.tasks),
            gamma: config.gamma,
            iters: config.iters,
            trials: config.trials,
            seed: config.seed,
            schedule: config.schedule,
            noise_halfwidth: config.noise_halfwidth,
            algorithms: vec![Algorithm::Tsvd, Algorithm::Td],
            divergence_factor: config.divergence_factor,
        }
        .validate()?;
    }

    let algos = [Algorithm::Tsvd, Algorithm::Td];
    let cells = (config.states * config.tasks) as f64;
    ranks
        .par_iter()
        .map(|&rank| {
            let seed = env::derive_seed(config.seed, &[env::stream::RANK, rank as u64]);
            let mdp = env::generate_mdp(config.states, config.tasks, rank, config.gamma, seed)?;
            let gt = env::exact_value(&mdp)?;
            let problem = Problem {
                mdp: &mdp,
                gt: &gt,
                features: None,
                trunc_k: sweep_truncation(rank, config.tasks),
                iters: config.iters,
                schedule: match config.schedule {
                    ScheduleKind::Theory => StepSchedule::theory(config.gamma),
                    ScheduleKind::Simple => StepSchedule::simple(),
                },
                noise_halfwidth: config.noise_halfwidth,
                seed,
                divergence_factor: config.divergence_factor,
                record: false,
            };
            let outcomes = run_trials(&problem, &algos, config.trials).map_err(|(abort, _)| {
                ExperimentError::Aborted {
                    abort,
                    partial: Vec::new(),
                }
            })?;
            let mut tsvd_mean = Matrix::zeros(config.states, config.tasks);
            let mut td_mean = Matrix::zeros(config.states, config.tasks);
            for outcome in &outcomes {
                tsvd_mean += &outcome.finals[0];
                td_mean += &outcome.finals[1];
            }
            let gap = (tsvd_mean - td_mean) / config.trials as f64;
            Ok(RankSweepRecord {
                rank,
                gap_mse: gap.norm_squared() / cells,
            })
        })
        .collect()
}

/// Empirical check of the misalignment and error envelopes.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    /// `max_{t≥1}` of mean `‖V_t H⊥H⊥ᵀ‖_F²` over `c₁α_0²/(t+α_0)`.
    pub theorem1_envelope_ratio: f64,
    /// `max_{t≥1}` of mean `‖V_t − V_*‖_F²` over the O(ln t / t) envelope.
    pub theorem2_envelope_ratio: f64,
    /// `‖R H⊥H⊥ᵀ‖_F / ‖R‖_F`.
    pub lemma1_residual: f64,
    /// Iterations (over all trials) with `‖w_t‖_F² > c₁`.
    pub lemma2_violations: u64,
    /// Least-squares slope of `ln(mean misalignment)` against `ln t` over the
    /// last decade of iterations.
    pub fitted_slope: f64,
    pub c1: f64,
    pub alpha0: f64,
    pub trials: usize,
    pub iters: u64,
    pub max_noise_norm_sq: f64,
    pub initial_error_sq: f64,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.theorem1_envelope_ratio <= 1.0
            && self.theorem2_envelope_ratio <= 1.0
            && self.lemma1_residual <= LEMMA1_TOL
    }

    pub fn slope_in_range(&self) -> bool {
        (-1.3..=-0.7).contains(&self.fitted_slope)
    }

    /// Flat `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let lines = [
            format!("c1={:.16e}", self.c1),
            format!("alpha0={:.16e}", self.alpha0),
            format!("trials={}", self.trials),
            format!("iters={}", self.iters),
            format!("theorem1_envelope_ratio={:.16e}", self.theorem1_envelope_ratio),
            format!("theorem2_envelope_ratio={:.16e}", self.theorem2_envelope_ratio),
            format!("lemma1_residual={:.16e}", self.lemma1_residual),
            format!("lemma2_violations={}", self.lemma2_violations),
            format!("max_noise_norm_sq={:.16e}", self.max_noise_norm_sq),
            format!("initial_error_sq={:.16e}", self.initial_error_sq),
            format!("fitted_slope={:.16e}", self.fitted_slope),
            format!("slope_in_range={}", self.slope_in_range()),
            format!("passed={}", self.passed()),
        ];
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

/// `c₁α_0²/(t+α_0)`.
pub fn misalignment_envelope(t: u64, c1: f64, alpha0: f64) -> f64 {
    c1 * alpha0 * alpha0 / (t as f64 + alpha0)
}

/// Bound on `E‖V_{t+1} − V_*‖_F²`:
/// `E‖V_0 − V_*‖² α_0/(t+α_0+1) + (2c₁α_0γ²/(1−γ) + c₁) α_0² ln(t+α_0)/(t+α_0+1)`.
pub fn error_envelope_next(t: u64, initial_error_sq: f64, c1: f64, alpha0: f64, gamma: f64) -> f64 {
    let t = t as f64;
    let coefficient = 2.0 * c1 * alpha0 * gamma * gamma / (1.0 - gamma) + c1;
    initial_error_sq * alpha0 / (t + alpha0 + 1.0)
        + coefficient * alpha0 * alpha0 * (t + alpha0).ln() / (t + alpha0 + 1.0)
}

/// Ordinary least-squares slope of `ys` on `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

/// Fractional ranks (ties share their average rank).
fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rx = fractional_ranks(xs);
    let ry = fractional_ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Runs TSVD under the theory schedule (`α_0 = 1/(1−γ)`) for at least
/// [`MIN_BOUND_TRIALS`] trials and compares trial means against both
/// envelopes. The schedule, trial count and algorithm list in `config` are
/// overridden.
pub fn verify_bounds(config: &ConvergenceConfig) -> Result<BoundReport, ExperimentError> {
    let config = ConvergenceConfig {
        schedule: ScheduleKind::Theory,
        trials: config.trials.max(MIN_BOUND_TRIALS),
        algorithms: vec![Algorithm::Tsvd],
        ..config.clone()
    };
    if config.iters < 1 {
        return Err(ExperimentError::Config("bound verification needs iters >= 1".into()));
    }
    let prepared = prepare(&config)?;
    let schedule = config.step_schedule();
    let alpha0 = schedule.alpha0;
    let c1 = learner::noise_bound(config.states, config.tasks, config.gamma);
    let lemma1_residual = env::row_space_residual(&prepared.mdp, &prepared.gt)?;

    let problem = Problem {
        mdp: &prepared.mdp,
        gt: &prepared.gt,
        features: None,
        trunc_k: config.trunc_k,
        iters: config.iters,
        schedule,
        noise_halfwidth: config.noise_halfwidth,
        seed: config.seed,
        divergence_factor: config.divergence_factor,
        record: true,
    };
    let outcomes = run_trials(&problem, &config.algorithms, config.trials).map_err(|(abort, _)| {
        ExperimentError::Aborted {
            abort,
            partial: Vec::new(),
        }
    })?;

    let mut lemma2_violations = 0;
    let mut max_noise_norm_sq: f64 = 0.0;
    for outcome in &outcomes {
        for m in &outcome.metrics[0] {
            max_noise_norm_sq = max_noise_norm_sq.max(m.noise_sq);
            if m.noise_sq > c1 {
                lemma2_violations += 1;
            }
        }
    }

    let len = config.iters as usize + 1;
    let mean = average_metrics(&outcomes, 1, len).remove(0);
    let initial_error_sq = mean[0].error_sq;
    let mut theorem1 = f64::NEG_INFINITY;
    let mut theorem2 = f64::NEG_INFINITY;
    for (t, m) in mean.iter().enumerate().skip(1) {
        let t = t as u64;
        theorem1 = theorem1.max(m.misalignment_sq / misalignment_envelope(t, c1, alpha0));
        let bound = error_envelope_next(t - 1, initial_error_sq, c1, alpha0, config.gamma);
        theorem2 = theorem2.max(m.error_sq / bound);
    }

    let start = (config.iters / 10).max(1);
    let (xs, ys): (Vec<f64>, Vec<f64>) = (start..=config.iters)
        .map(|t| ((t as f64).ln(), mean[t as usize].misalignment_sq.ln()))
        .unzip();
    let fitted_slope = least_squares_slope(&xs, &ys);

    Ok(BoundReport {
        theorem1_envelope_ratio: theorem1,
        theorem2_envelope_ratio: theorem2,
        lemma1_residual,
        lemma2_violations,
        fitted_slope,
        c1,
        alpha0,
        trials: config.trials,
        iters: config.iters,
        max_noise_norm_sq,
        initial_error_sq,
    })
}
