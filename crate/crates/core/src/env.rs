//! Synthetic multi-task Markov chains with low-rank rewards.
//!
//! All tasks share one policy-induced transition matrix `P` and discount `γ`
//! and differ only in their expected rewards, which are stacked column-wise
//! into a `d x N` matrix of rank `r`.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix, SubspaceComplement, TruncatedSvd};

/// Row sums of a transition matrix must equal 1 within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Relative residual tolerated by [`exact_value`].
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("rank {rank} must lie in [1, min(states, tasks)] = [1, {max}]")]
    InvalidRank { rank: usize, max: usize },
    #[error("discount {0} outside [0, 1)")]
    InvalidDiscount(f64),
    #[error("states and tasks must be positive (got {states} states, {tasks} tasks)")]
    EmptyProblem { states: usize, tasks: usize },
    #[error("transition matrix must be square, found {0:?}")]
    NotSquare((usize, usize)),
    #[error("transition row {row} is not a probability distribution (sum {sum})")]
    NotStochastic { row: usize, sum: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("reward normalizer max(ΦΜ) = {0} is not positive")]
    DegenerateReward(f64),
    #[error("noise half-width {0} must be finite and nonnegative")]
    InvalidNoise(f64),
    #[error("linear solve for the value function failed: {0}")]
    SolveFailed(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("snapshot I/O: {0}")]
    Io(String),
}

impl From<std::io::Error> for EnvError {
    fn from(e: std::io::Error) -> Self {
        EnvError::Io(e.to_string())
    }
}

/// Low-rank generative factors of the expected reward, `R = Φ μ / max(Φ μ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardFactors {
    /// `d x r`.
    pub state: Matrix,
    /// `r x N`.
    pub task: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskMdp {
    transition: Matrix,
    expected_reward: Matrix,
    discount: f64,
    rank: usize,
    factors: Option<RewardFactors>,
    seed: Option<u64>,
    /// Row-major cumulative sums of `transition`, for inverse-CDF sampling.
    cumulative: Vec<f64>,
}

impl MultiTaskMdp {
    /// Builds an instance from explicit matrices. `rank` is the declared rank
    /// of the stacked value function and must not exceed `min(d, N)`.
    pub fn new(
        transition: Matrix,
        expected_reward: Matrix,
        discount: f64,
        rank: usize,
    ) -> Result<Self, EnvError> {
        let d = transition.nrows();
        if transition.ncols() != d {
            return Err(EnvError::NotSquare(transition.shape()));
        }
        let n = expected_reward.ncols();
        if d == 0 || n == 0 {
            return Err(EnvError::EmptyProblem { states: d, tasks: n });
        }
        if expected_reward.nrows() != d {
            return Err(EnvError::Shape(format!(
                "expected reward has {} rows, transition has {d}",
                expected_reward.nrows()
            )));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(EnvError::InvalidDiscount(discount));
        }
        if rank > d.min(n) {
            return Err(EnvError::InvalidRank {
                rank,
                max: d.min(n),
            });
        }
        if expected_reward.iter().any(|x| !x.is_finite()) {
            return Err(EnvError::Linalg(LinalgError::NonFinite));
        }

        let mut cumulative = vec![0.0; d * d];
        for s in 0..d {
            let mut acc = 0.0;
            for t in 0..d {
                let p = transition[(s, t)];
                if !(p >= 0.0 && p.is_finite()) {
                    return Err(EnvError::NotStochastic { row: s, sum: f64::NAN });
                }
                acc += p;
                cumulative[s * d + t] = acc;
            }
            if (acc - 1.0).abs() > ROW_SUM_TOL {
                return Err(EnvError::NotStochastic { row: s, sum: acc });
            }
        }

        Ok(MultiTaskMdp {
            transition,
            expected_reward,
            discount,
            rank,
            factors: None,
            seed: None,
            cumulative,
        })
    }

    pub fn with_factors(mut self, factors: RewardFactors) -> Result<Self, EnvError> {
        let (d, n) = self.expected_reward.shape();
        if factors.state.nrows() != d
            || factors.task.ncols() != n
            || factors.state.ncols() != factors.task.nrows()
        {
            return Err(EnvError::Shape(format!(
                "factors {:?} x {:?} do not produce a {d}x{n} reward",
                factors.state.shape(),
                factors.task.shape()
            )));
        }
        self.factors = Some(factors);
        Ok(self)
    }

    pub fn states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn tasks(&self) -> usize {
        self.expected_reward.ncols()
    }

    pub fn transition(&self) -> &Matrix {
        &self.transition
    }

    pub fn expected_reward(&self) -> &Matrix {
        &self.expected_reward
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn factors(&self) -> Option<&RewardFactors> {
        self.factors.as_ref()
    }

    /// Seed the instance was generated from, if any.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Inverse-CDF draw of a successor of `state` given `u ∈ [0, 1)`.
    /// Zero-probability successors are never returned.
    pub fn successor(&self, state: usize, u: f64) -> usize {
        let d = self.states();
        let row = &self.cumulative[state * d..(state + 1) * d];
        let mut last_support = 0;
        for (t, &c) in row.iter().enumerate() {
            if self.transition[(state, t)] > 0.0 {
                if u < c {
                    return t;
                }
                last_support = t;
            }
        }
        // Only reachable when rounding leaves the row sum just below u.
        last_support
    }
}

/// Exact value function and its subspace structure.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `V_* = (I − γP)⁻¹ R`.
    pub value: Matrix,
    /// Rank-r truncated SVD of `value`.
    pub svd: TruncatedSvd,
    /// Complement of the top-r right singular subspace of `value`.
    pub complement: SubspaceComplement,
    /// `σ_max(V_*)`.
    pub top_singular_value: f64,
}

/// One synchronous sample: a successor for every state (shared by all tasks)
/// and a realized reward for every (state, task).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub next_state: Vec<usize>,
    pub reward: Matrix,
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a path of indices. Distinct paths
/// give statistically independent streams; the result does not depend on the
/// order in which children are requested.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(seed), |acc, &p| mix64(acc ^ mix64(p)))
}

/// Stream labels used with [`derive_seed`].
pub mod stream {
    pub const MDP: u64 = 0x004d_4450;
    pub const INIT: u64 = 0x494e_4954;
    pub const SAMPLE: u64 = 0x5341_4d50;
    pub const RANK: u64 = 0x5241_4e4b;
}

/// Generator for a (seed, path). All randomness in the crate is ChaCha8.
pub fn rng_for(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

/// Sample stream of iteration `iteration` in trial `trial`.
pub fn sample_rng(seed: u64, trial: u64, iteration: u64) -> ChaCha8Rng {
    rng_for(seed, &[stream::SAMPLE, trial, iteration])
}

/// Random low-rank instance: standard-normal factors `Φ (d x r)`, `μ (r x N)`,
/// `R = Φμ / max(Φμ)`, and `P` from row-normalized absolute normal draws.
pub fn generate_mdp(
    states: usize,
    tasks: usize,
    rank: usize,
    discount: f64,
    seed: u64,
) -> Result<MultiTaskMdp, EnvError> {
    if states == 0 || tasks == 0 {
        return Err(EnvError::EmptyProblem { states, tasks });
    }
    if rank < 1 || rank > states.min(tasks) {
        return Err(EnvError::InvalidRank {
            rank,
            max: states.min(tasks),
        });
    }
    if !(0.0..1.0).contains(&discount) {
        return Err(EnvError::InvalidDiscount(discount));
    }

    let mut rng = rng_for(seed, &[stream::MDP]);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let state_factor = Matrix::from_row_iterator(states, rank, (0..states * rank).map(|_| normal()));
    let task_factor = Matrix::from_row_iterator(rank, tasks, (0..rank * tasks).map(|_| normal()));
    let mut transition =
        Matrix::from_row_iterator(states, states, (0..states * states).map(|_| normal().abs()));
    for mut row in transition.row_iter_mut() {
        let sum: f64 = row.iter().sum();
        row /= sum;
    }

    let product = &state_factor * &task_factor;
    let scale = product.max();
    if !(scale > 0.0) {
        return Err(EnvError::DegenerateReward(scale));
    }
    let reward = product / scale;

    let mut mdp = MultiTaskMdp::new(transition, reward, discount, rank)?.with_factors(RewardFactors {
        state: state_factor,
        task: task_factor,
    })?;
    mdp.seed = Some(seed);
    Ok(mdp)
}

/// Solves `(I − γP) V = R` for all tasks and derives the subspace structure.
pub fn exact_value(mdp: &MultiTaskMdp) -> Result<GroundTruth, EnvError> {
    let d = mdp.states();
    let n = mdp.tasks();
    let system = Matrix::identity(d, d) - mdp.transition() * mdp.discount();
    let reward = mdp.expected_reward();
    let lu = system.clone().lu();
    let mut value = lu
        .solve(reward)
        .ok_or_else(|| EnvError::SolveFailed("singular system".into()))?;
    // One step of iterative refinement.
    let correction = lu
        .solve(&(reward - &system * &value))
        .ok_or_else(|| EnvError::SolveFailed("singular system".into()))?;
    value += correction;

    if value.iter().any(|x| !x.is_finite()) {
        return Err(EnvError::SolveFailed("non-finite solution".into()));
    }
    let residual = (&system * &value - reward).norm();
    if residual > SOLVE_RESIDUAL_TOL * reward.norm() {
        return Err(EnvError::SolveFailed(format!(
            "residual {residual:e} exceeds {SOLVE_RESIDUAL_TOL:e}·‖R‖"
        )));
    }

    let rank = mdp.rank();
    let top_singular_value = linalg::truncated_svd(&value, 1)?.singular_values[0];
    let svd = linalg::truncated_svd(&value, rank.max(1))?;
    let complement = if rank >= n {
        SubspaceComplement::empty(n)
    } else if top_singular_value == 0.0 {
        linalg::row_space_complement_unchecked(&value, rank)?
    } else {
        linalg::row_space_complement(&value, rank)?
    };

    Ok(GroundTruth {
        value,
        svd,
        complement,
        top_singular_value,
    })
}

/// Draws one synchronous batch. Successors are drawn first, in state order;
/// reward noise `Uniform(−β, β)` follows in row-major (state, task) order.
pub fn sample_batch<R: Rng + ?Sized>(
    mdp: &MultiTaskMdp,
    noise_halfwidth: f64,
    rng: &mut R,
) -> Result<SampleBatch, EnvError> {
    if !(noise_halfwidth >= 0.0 && noise_halfwidth.is_finite()) {
        return Err(EnvError::InvalidNoise(noise_halfwidth));
    }
    let d = mdp.states();
    let next_state = (0..d)
        .map(|s| mdp.successor(s, rng.random::<f64>()))
        .collect();
    let mut reward = mdp.expected_reward().clone();
    if noise_halfwidth > 0.0 {
        let noise = Uniform::new_inclusive(-noise_halfwidth, noise_halfwidth)
            .expect("finite positive half-width");
        for s in 0..d {
            for i in 0..mdp.tasks() {
                reward[(s, i)] += noise.sample(rng);
            }
        }
    }
    Ok(SampleBatch { next_state, reward })
}

/// ‖R H⊥ H⊥ᵀ‖_F / ‖R‖_F: how much of the reward lies outside the value
/// function's row space (zero when `R` and `V_*` share a row space).
pub fn row_space_residual(mdp: &MultiTaskMdp, gt: &GroundTruth) -> Result<f64, EnvError> {
    let reward = mdp.expected_reward();
    let norm = reward.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    Ok(linalg::misalignment(reward, &gt.complement)?.sqrt() / norm)
}

const SNAPSHOT_MAGIC: &str = "# lowrank-td mdp snapshot v1";

fn write_matrix<W: Write>(out: &mut W, name: &str, m: &Matrix) -> std::io::Result<()> {
    writeln!(out, "{name} {} {}", m.nrows(), m.ncols())?;
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Writes the text snapshot format documented in the README. Values are
/// rendered in shortest round-trip form, so reading back is lossless and equal
/// instances produce identical bytes.
pub fn write_snapshot<W: Write>(mdp: &MultiTaskMdp, out: &mut W) -> Result<(), EnvError> {
    writeln!(out, "{SNAPSHOT_MAGIC}")?;
    writeln!(out, "states {}", mdp.states())?;
    writeln!(out, "tasks {}", mdp.tasks())?;
    writeln!(out, "rank {}", mdp.rank())?;
    writeln!(out, "gamma {:?}", mdp.discount())?;
    match mdp.seed() {
        Some(seed) => writeln!(out, "seed {seed}")?,
        None => writeln!(out, "seed none")?,
    }
    write_matrix(out, "transition", mdp.transition())?;
    write_matrix(out, "expected_reward", mdp.expected_reward())?;
    if let Some(f) = mdp.factors() {
        write_matrix(out, "state_factor", &f.state)?;
        write_matrix(out, "task_factor", &f.task)?;
    }
    Ok(())
}

struct SnapshotReader<I> {
    lines: I,
    line_no: usize,
}

impl<I: Iterator<Item = std::io::Result<String>>> SnapshotReader<I> {
    fn next_line(&mut self) -> Result<Option<String>, EnvError> {
        for line in self.lines.by_ref() {
            self.line_no += 1;
            let line = line?;
            let trimmed = line.trim();
            if !trimmed.is_empty() && !trimmed.starts_with('#') {
                return Ok(Some(trimmed.to_string()));
            }
        }
        Ok(None)
    }

    fn err(&self, msg: impl std::fmt::Display) -> EnvError {
        EnvError::Snapshot(format!("line {}: {msg}", self.line_no))
    }

    fn field(&mut self, key: &str) -> Result<String, EnvError> {
        let line = self.next_line()?.ok_or_else(|| self.err(format!("missing `{key}`")))?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.trim().to_string()),
            _ => Err(self.err(format!("expected `{key} <value>`"))),
        }
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, EnvError> {
        let raw = self.field(key)?;
        raw.parse().map_err(|_| self.err(format!("bad value for `{key}`: {raw}")))
    }

    fn matrix(&mut self, header: String) -> Result<(String, Matrix), EnvError> {
        let parts: Vec<&str> = header.split_whitespace().collect();
        let [name, rows, cols] = parts.as_slice() else {
            return Err(self.err("expected `<name> <rows> <cols>`"));
        };
        let rows: usize = rows.parse().map_err(|_| self.err("bad row count"))?;
        let cols: usize = cols.parse().map_err(|_| self.err("bad column count"))?;
        let name = name.to_string();
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self.next_line()?.ok_or_else(|| self.err("truncated matrix"))?;
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|_| self.err(format!("bad number {tok}")))?);
            }
            if data.len() - before != cols {
                return Err(self.err(format!("expected {cols} entries")));
            }
        }
        Ok((name, Matrix::from_row_slice(rows, cols, &data)))
    }
}

/// Reads a snapshot produced by [`write_snapshot`].
pub fn read_snapshot<R: BufRead>(input: R) -> Result<MultiTaskMdp, EnvError> {
    let mut reader = SnapshotReader {
        lines: input.lines(),
        line_no: 0,
    };
    let states: usize = reader.parsed("states")?;
    let tasks: usize = reader.parsed("tasks")?;
    let rank: usize = reader.parsed("rank")?;
    let gamma: f64 = reader.parsed("gamma")?;
    let seed = match reader.field("seed")?.as_str() {
        "none" => None,
        raw => Some(raw.parse::<u64>().map_err(|_| reader.err("bad seed"))?),
    };

    let mut transition = None;
    let mut reward = None;
    let mut state_factor = None;
    let mut task_factor = None;
    while let Some(header) = reader.next_line()? {
        let (name, m) = reader.matrix(header)?;
        let slot = match name.as_str() {
            "transition" => &mut transition,
            "expected_reward" => &mut reward,
            "state_factor" => &mut state_factor,
            "task_factor" => &mut task_factor,
            other => return Err(reader.err(format!("unknown section `{other}`"))),
        };
        *slot = Some(m);
    }

    let transition = transition.ok_or_else(|| EnvError::Snapshot("missing transition".into()))?;
    let reward = reward.ok_or_else(|| EnvError::Snapshot("missing expected_reward".into()))?;
    if transition.shape() != (states, states) || reward.shape() != (states, tasks) {
        return Err(EnvError::Snapshot("matrix shapes disagree with header".into()));
    }
    let mut mdp = MultiTaskMdp::new(transition, reward, gamma, rank)?;
    match (state_factor, task_factor) {
        (Some(state), Some(task)) => mdp = mdp.with_factors(RewardFactors { state, task })?,
        (None, None) => {}
        _ => return Err(EnvError::Snapshot("factors must appear together".into())),
    }
    mdp.seed = seed;
    Ok(mdp)
}
