//! Synchronous policy-evaluation updates: truncated-SVD TD, per-task tabular
//! TD, and TD with frozen linear features.

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::env::{self, GroundTruth, MultiTaskMdp, SampleBatch};
use crate::linalg::{self, LinalgError, Matrix};

/// Default divergence guard: abort once `‖V_t‖_F > 1e6 · ‖V_*‖_F`.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnerError {
    #[error("truncation rank {k} outside [1, {tasks}]")]
    InvalidTruncation { k: usize, tasks: usize },
    #[error("step size {0} outside [0, 1]")]
    InvalidStep(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by the update")]
    NonFinite,
    #[error("features are not orthonormal (max deviation {0:e})")]
    FeaturesNotOrthonormal(f64),
    #[error("iterate norm {norm:e} exceeds {limit:e}")]
    Diverged { norm: f64, limit: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// The `d x N` iterate `V_t`; column `i` is task `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueMatrix {
    values: Matrix,
}

impl ValueMatrix {
    pub fn new(values: Matrix) -> Result<Self, LearnerError> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(LearnerError::NonFinite);
        }
        Ok(ValueMatrix { values })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_inner(self) -> Matrix {
        self.values
    }

    pub fn get(&self, state: usize, task: usize) -> f64 {
        self.values[(state, task)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// `α_t = α_0 / (t + α_0)`.
    Theory,
    /// `α_t = 1 / (t + 1)`.
    Simple,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub kind: ScheduleKind,
    pub alpha0: f64,
}

impl StepSchedule {
    /// Theory schedule with `α_0 = 1/(1−γ)`, the choice under which the
    /// convergence bounds are stated.
    pub fn theory(discount: f64) -> Self {
        StepSchedule {
            kind: ScheduleKind::Theory,
            alpha0: 1.0 / (1.0 - discount),
        }
    }

    pub fn simple() -> Self {
        StepSchedule {
            kind: ScheduleKind::Simple,
            alpha0: 1.0,
        }
    }

    pub fn at(&self, t: u64) -> f64 {
        step_size(t, self)
    }
}

pub fn step_size(t: u64, sched: &StepSchedule) -> f64 {
    match sched.kind {
        ScheduleKind::Theory => sched.alpha0 / (t as f64 + sched.alpha0),
        ScheduleKind::Simple => 1.0 / (t as f64 + 1.0),
    }
}

/// Frozen orthonormal features `U (d x k)` and per-task weights `W (k x N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    features: Matrix,
    weights: Matrix,
}

impl FeatureModel {
    pub fn new(features: Matrix, weights: Matrix) -> Result<Self, LearnerError> {
        if features.ncols() != weights.nrows() {
            return Err(LearnerError::Shape(format!(
                "features {:?} incompatible with weights {:?}",
                features.shape(),
                weights.shape()
            )));
        }
        let k = features.ncols();
        let deviation = (features.transpose() * &features - Matrix::identity(k, k)).amax();
        if !(deviation <= 1e-10) {
            return Err(LearnerError::FeaturesNotOrthonormal(deviation));
        }
        if weights.iter().any(|x| !x.is_finite()) {
            return Err(LearnerError::NonFinite);
        }
        Ok(FeatureModel { features, weights })
    }

    /// `W_0 = Uᵀ V_0`, the least-squares solution of `U W_0 = V_0`.
    pub fn from_value(features: Matrix, initial: &ValueMatrix) -> Result<Self, LearnerError> {
        if features.nrows() != initial.values().nrows() {
            return Err(LearnerError::Shape("features and value differ in state count".into()));
        }
        let weights = features.transpose() * initial.values();
        Self::new(features, weights)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    /// `U W`.
    pub fn implied_value(&self) -> Matrix {
        &self.features * &self.weights
    }
}

/// One noise sample `w_t` together with the bound it is compared against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticRecord {
    /// `‖w_t‖_F²`.
    pub noise_norm_sq: f64,
    /// `c₁ = 16 N² d / (1−γ)²`.
    pub noise_bound: f64,
    pub step: f64,
}

/// `c₁ = 16 N² d / (1−γ)²`.
pub fn noise_bound(states: usize, tasks: usize, discount: f64) -> f64 {
    let n = tasks as f64;
    16.0 * n * n * states as f64 / ((1.0 - discount) * (1.0 - discount))
}

fn check_inputs(v: &Matrix, batch: &SampleBatch, mdp: &MultiTaskMdp) -> Result<(), LearnerError> {
    let shape = (mdp.states(), mdp.tasks());
    if v.shape() != shape || batch.reward.shape() != shape || batch.next_state.len() != shape.0 {
        return Err(LearnerError::Shape(format!(
            "value {:?}, reward {:?}, {} successors for a {}x{} problem",
            v.shape(),
            batch.reward.shape(),
            batch.next_state.len(),
            shape.0,
            shape.1
        )));
    }
    Ok(())
}

fn check_step(alpha: f64) -> Result<(), LearnerError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(LearnerError::InvalidStep(alpha));
    }
    Ok(())
}

fn check_truncation(k: usize, tasks: usize) -> Result<(), LearnerError> {
    if k < 1 || k > tasks {
        return Err(LearnerError::InvalidTruncation { k, tasks });
    }
    Ok(())
}

/// Rank-k bootstrap target `P^k(V)`.
pub fn projected_target(v: &ValueMatrix, k: usize) -> Result<Matrix, LearnerError> {
    check_truncation(k, v.values().ncols())?;
    Ok(linalg::project_rank_k(v.values(), k)?)
}

/// `V'[s,i] = V[s,i] + α (R_t[s,i] + γ G[s'_s, i] − V[s,i])` for every entry,
/// reading only the pre-step `V` and bootstrap target `G`.
pub fn apply_td_update(
    v: &ValueMatrix,
    target: &Matrix,
    batch: &SampleBatch,
    mdp: &MultiTaskMdp,
    alpha: f64,
) -> Result<ValueMatrix, LearnerError> {
    let values = v.values();
    check_inputs(values, batch, mdp)?;
    check_step(alpha)?;
    if target.shape() != values.shape() {
        return Err(LearnerError::Shape("target and value differ in shape".into()));
    }
    let gamma = mdp.discount();
    let next = Matrix::from_fn(values.nrows(), values.ncols(), |s, i| {
        let current = values[(s, i)];
        current + alpha * (batch.reward[(s, i)] + gamma * target[(batch.next_state[s], i)] - current)
    });
    ValueMatrix::new(next)
}

/// Truncated-SVD TD: one synchronous sweep bootstrapping from the rank-k
/// projection of the current iterate.
pub fn tsvd_td_step(
    v: &ValueMatrix,
    batch: &SampleBatch,
    mdp: &MultiTaskMdp,
    k: usize,
    alpha: f64,
) -> Result<ValueMatrix, LearnerError> {
    check_inputs(v.values(), batch, mdp)?;
    let target = projected_target(v, k)?;
    apply_td_update(v, &target, batch, mdp, alpha)
}

/// Independent per-task tabular TD.
pub fn vanilla_td_step(
    v: &ValueMatrix,
    batch: &SampleBatch,
    mdp: &MultiTaskMdp,
    alpha: f64,
) -> Result<ValueMatrix, LearnerError> {
    apply_td_update(v, v.values(), batch, mdp, alpha)
}

/// Linear TD with frozen features: `W' = W + α Uᵀ δ` where
/// `δ[s,i] = R_t[s,i] + γ Ṽ[s'_s, i] − Ṽ[s,i]` and `Ṽ = U W`.
pub fn feature_td_step(
    model: &FeatureModel,
    batch: &SampleBatch,
    mdp: &MultiTaskMdp,
    alpha: f64,
) -> Result<FeatureModel, LearnerError> {
    check_step(alpha)?;
    let implied = model.implied_value();
    check_inputs(&implied, batch, mdp)?;
    let gamma = mdp.discount();
    let td_error = Matrix::from_fn(implied.nrows(), implied.ncols(), |s, i| {
        batch.reward[(s, i)] + gamma * implied[(batch.next_state[s], i)] - implied[(s, i)]
    });
    let weights = &model.weights + model.features.transpose() * td_error * alpha;
    if weights.iter().any(|x| !x.is_finite()) {
        return Err(LearnerError::NonFinite);
    }
    Ok(FeatureModel {
        features: model.features.clone(),
        weights,
    })
}

/// Sampling noise of one update with bootstrap target `G`:
/// `w[s,i] = (R_t − R)[s,i] + γ (G[s'_s, i] − Σ_{s'} P(s'|s) G[s', i])`.
pub fn noise_matrix(target: &Matrix, batch: &SampleBatch, mdp: &MultiTaskMdp) -> Result<Matrix, LearnerError> {
    check_inputs(target, batch, mdp)?;
    let expected = mdp.transition() * target;
    let gamma = mdp.discount();
    let reward = mdp.expected_reward();
    Ok(Matrix::from_fn(target.nrows(), target.ncols(), |s, i| {
        (batch.reward[(s, i)] - reward[(s, i)])
            + gamma * (target[(batch.next_state[s], i)] - expected[(s, i)])
    }))
}

pub fn noise_term(
    v: &ValueMatrix,
    batch: &SampleBatch,
    mdp: &MultiTaskMdp,
    k: usize,
    alpha: f64,
) -> Result<DiagnosticRecord, LearnerError> {
    let target = projected_target(v, k)?;
    let w = noise_matrix(&target, batch, mdp)?;
    Ok(DiagnosticRecord {
        noise_norm_sq: w.norm_squared(),
        noise_bound: noise_bound(mdp.states(), mdp.tasks(), mdp.discount()),
        step: alpha,
    })
}

/// Rebuilds the step from its matrix form
/// `(1−α) V + αγ P P^k(V) + α w + α R` and returns it with its Frobenius
/// distance to [`tsvd_td_step`]'s output.
pub fn decompose_matrix_step(
    v: &ValueMatrix,
    batch: &SampleBatch,
    mdp: &MultiTaskMdp,
    k: usize,
    alpha: f64,
) -> Result<(ValueMatrix, f64), LearnerError> {
    check_step(alpha)?;
    let target = projected_target(v, k)?;
    let w = noise_matrix(&target, batch, mdp)?;
    let gamma = mdp.discount();
    let rebuilt = v.values() * (1.0 - alpha)
        + (mdp.transition() * &target) * (alpha * gamma)
        + w * alpha
        + mdp.expected_reward() * alpha;
    let stepped = apply_td_update(v, &target, batch, mdp, alpha)?;
    let residual = (&rebuilt - stepped.values()).norm();
    Ok((ValueMatrix::new(rebuilt)?, residual))
}

/// `V_0[s,i] = σ_max(V_*) z`, `z` i.i.d. standard normal, drawn column-major.
pub fn initialize_value(gt: &GroundTruth, seed: u64) -> ValueMatrix {
    let (d, n) = gt.value.shape();
    let mut rng = env::rng_for(seed, &[env::stream::INIT]);
    let scale = gt.top_singular_value;
    let values = Matrix::from_fn(d, n, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        scale * z
    });
    ValueMatrix { values }
}

/// Errors once `‖V‖_F` exceeds `factor · reference_norm`.
pub fn check_divergence(v: &Matrix, reference_norm: f64, factor: f64) -> Result<(), LearnerError> {
    let norm = v.norm();
    let limit = factor * reference_norm;
    if !norm.is_finite() {
        return Err(LearnerError::NonFinite);
    }
    if norm > limit {
        return Err(LearnerError::Diverged { norm, limit });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{exact_value, generate_mdp, sample_batch, sample_rng};
    use nalgebra::dmatrix;

    fn swap_chain() -> MultiTaskMdp {
        MultiTaskMdp::new(dmatrix![0.0, 1.0; 1.0, 0.0], dmatrix![1.0; 0.0], 0.5, 1).unwrap()
    }

    #[test]
    fn schedules() {
        let theory = StepSchedule::theory(0.5);
        assert_eq!(theory.alpha0, 2.0);
        assert_eq!(theory.at(0), 1.0);
        assert_eq!(StepSchedule::simple().at(9), 0.1);
        for sched in [theory, StepSchedule::simple(), StepSchedule::theory(0.95)] {
            for t in 0..1000 {
                assert!(sched.at(t + 1) < sched.at(t));
            }
        }
    }

    #[test]
    fn zero_step_is_identity() {
        let mdp = generate_mdp(6, 3, 2, 0.9, 1).unwrap();
        let v = ValueMatrix::new(Matrix::from_fn(6, 3, |s, i| (s * 3 + i) as f64)).unwrap();
        let batch = sample_batch(&mdp, 0.1, &mut sample_rng(0, 0, 0)).unwrap();
        assert_eq!(vanilla_td_step(&v, &batch, &mdp, 0.0).unwrap(), v);
        let (rebuilt, residual) = decompose_matrix_step(&v, &batch, &mdp, 2, 0.0).unwrap();
        assert_eq!(rebuilt, v);
        assert_eq!(residual, 0.0);
    }

    #[test]
    fn hand_computed_vanilla_update() {
        // V = (1, 2), successors swap, α = 0.5, γ = 0.5, R = (1, 0):
        // V'(0) = 1 + 0.5 (1 + 0.5·2 − 1) = 1.5, V'(1) = 2 + 0.5 (0 + 0.5·1 − 2) = 1.25.
        let mdp = swap_chain();
        let v = ValueMatrix::new(dmatrix![1.0; 2.0]).unwrap();
        let batch = SampleBatch {
            next_state: vec![1, 0],
            reward: dmatrix![1.0; 0.0],
        };
        let next = vanilla_td_step(&v, &batch, &mdp, 0.5).unwrap();
        assert_eq!(next.values(), &dmatrix![1.5; 1.25]);
    }

    #[test]
    fn full_rank_truncation_matches_vanilla() {
        let mdp = generate_mdp(12, 4, 2, 0.9, 2).unwrap();
        let gt = exact_value(&mdp).unwrap();
        let v = initialize_value(&gt, 5);
        let batch = sample_batch(&mdp, 0.3, &mut sample_rng(1, 0, 0)).unwrap();
        let a = tsvd_td_step(&v, &batch, &mdp, 4, 0.3).unwrap();
        let b = vanilla_td_step(&v, &batch, &mdp, 0.3).unwrap();
        assert!(a.values().iter().zip(b.values().iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn rejects_invalid_arguments() {
        let mdp = generate_mdp(5, 3, 1, 0.5, 0).unwrap();
        let v = ValueMatrix::new(Matrix::zeros(5, 3)).unwrap();
        let batch = sample_batch(&mdp, 0.0, &mut sample_rng(0, 0, 0)).unwrap();
        assert_eq!(
            tsvd_td_step(&v, &batch, &mdp, 0, 0.5).unwrap_err(),
            LearnerError::InvalidTruncation { k: 0, tasks: 3 }
        );
        assert_eq!(
            tsvd_td_step(&v, &batch, &mdp, 4, 0.5).unwrap_err(),
            LearnerError::InvalidTruncation { k: 4, tasks: 3 }
        );
        assert_eq!(vanilla_td_step(&v, &batch, &mdp, 1.5).unwrap_err(), LearnerError::InvalidStep(1.5));
        let wrong = ValueMatrix::new(Matrix::zeros(4, 3)).unwrap();
        assert!(matches!(vanilla_td_step(&wrong, &batch, &mdp, 0.5), Err(LearnerError::Shape(_))));
        assert!(ValueMatrix::new(dmatrix![f64::INFINITY]).is_err());
    }

    #[test]
    fn identity_features_reduce_to_tabular() {
        let mdp = generate_mdp(5, 3, 2, 0.8, 3).unwrap();
        let gt = exact_value(&mdp).unwrap();
        let v = initialize_value(&gt, 1);
        let model = FeatureModel::from_value(Matrix::identity(5, 5), &v).unwrap();
        let batch = sample_batch(&mdp, 0.2, &mut sample_rng(2, 0, 0)).unwrap();
        let stepped = feature_td_step(&model, &batch, &mdp, 0.4).unwrap();
        let tabular = vanilla_td_step(&v, &batch, &mdp, 0.4).unwrap();
        assert!((stepped.implied_value() - tabular.values()).amax() <= 1e-12);
    }

    #[test]
    fn zero_td_error_keeps_weights() {
        // Single absorbing state with R = (1 − γ) V makes δ = 0.
        let mdp = MultiTaskMdp::new(dmatrix![1.0], dmatrix![0.5, 1.0], 0.5, 1).unwrap();
        let model = FeatureModel::new(dmatrix![1.0], dmatrix![1.0, 2.0]).unwrap();
        let batch = SampleBatch {
            next_state: vec![0],
            reward: dmatrix![0.5, 1.0],
        };
        let next = feature_td_step(&model, &batch, &mdp, 0.7).unwrap();
        assert_eq!(next.weights(), model.weights());
    }

    #[test]
    fn rejects_non_orthonormal_features() {
        let err = FeatureModel::new(dmatrix![2.0; 0.0], dmatrix![1.0]).unwrap_err();
        assert!(matches!(err, LearnerError::FeaturesNotOrthonormal(_)));
    }

    #[test]
    fn noise_vanishes_without_sampling_error() {
        let p = dmatrix![0.0, 1.0, 0.0; 0.0, 0.0, 1.0; 1.0, 0.0, 0.0];
        let mdp = MultiTaskMdp::new(p, dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 1.0], 0.9, 2).unwrap();
        let v = ValueMatrix::new(dmatrix![1.0, 2.0; 3.0, -1.0; 0.5, 0.0]).unwrap();
        let batch = sample_batch(&mdp, 0.0, &mut sample_rng(0, 0, 0)).unwrap();
        let diag = noise_term(&v, &batch, &mdp, 1, 0.5).unwrap();
        assert!(diag.noise_norm_sq <= 1e-28);
        assert_eq!(diag.noise_bound, noise_bound(3, 2, 0.9));
        assert_eq!(diag.step, 0.5);
        let (_, residual) = decompose_matrix_step(&v, &batch, &mdp, 1, 0.5).unwrap();
        assert!(residual <= 1e-12 * v.values().norm());
    }

    #[test]
    fn two_state_noise_by_hand() {
        let gamma = 0.9;
        let mdp = MultiTaskMdp::new(
            dmatrix![0.5, 0.5; 0.5, 0.5],
            dmatrix![0.0, 0.0; 0.0, 0.0],
            gamma,
            2,
        )
        .unwrap();
        let g = dmatrix![3.0, 1.0; -1.0, 5.0];
        let batch = SampleBatch {
            next_state: vec![0, 0],
            reward: Matrix::zeros(2, 2),
        };
        let w = noise_matrix(&g, &batch, &mdp).unwrap();
        for s in 0..2 {
            for i in 0..2 {
                let expected = gamma * (g[(0, i)] - (g[(0, i)] + g[(1, i)]) / 2.0);
                assert!((w[(s, i)] - expected).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn noise_bound_formula() {
        assert_eq!(noise_bound(200, 40, 0.0), 16.0 * 1600.0 * 200.0);
        let c = noise_bound(200, 40, 0.95);
        assert!((c - 16.0 * 1600.0 * 200.0 / 0.0025).abs() <= 1e-6 * c);
    }

    #[test]
    fn initialization_scale_and_determinism() {
        let mdp = generate_mdp(100, 100, 5, 0.9, 8).unwrap();
        let gt = exact_value(&mdp).unwrap();
        let a = initialize_value(&gt, 3);
        assert_eq!(a, initialize_value(&gt, 3));
        let n = a.values().len() as f64;
        let mean = a.values().sum() / n;
        let var = a.values().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let ratio = var.sqrt() / gt.top_singular_value;
        assert!((ratio - 1.0).abs() <= 0.05, "std ratio {ratio}");

        let zero = MultiTaskMdp::new(Matrix::identity(2, 2), Matrix::zeros(2, 2), 0.5, 1).unwrap();
        let v0 = initialize_value(&exact_value(&zero).unwrap(), 1);
        assert!(v0.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn divergence_guard() {
        let m = Matrix::from_element(2, 2, 10.0);
        assert!(check_divergence(&m, 1.0, 100.0).is_ok());
        assert!(matches!(check_divergence(&m, 1.0, 1.0), Err(LearnerError::Diverged { .. })));
    }
}
