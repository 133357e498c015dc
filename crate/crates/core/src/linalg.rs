//! Dense truncated SVD, rank-k projection and the subspace metrics used to
//! track convergence.
//!
//! The right singular vectors are obtained from a symmetric eigensolve of the
//! `N x N` Gram matrix `MᵀM`. Value matrices are tall (`d ≫ N`), so this is
//! far cheaper than a full SVD, and the projection is formed from the right:
//! `P^k(M) = M H^k (H^k)ᵀ`.
//!
//! Singular values are taken as `‖M h_j‖` rather than `sqrt(λ_j)`, which keeps
//! tiny singular values accurate to machine precision relative to `σ_1`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;

/// Relative effective-rank threshold used when building a row-space complement.
pub const EFFECTIVE_RANK_TOL: f64 = 1e-10;

/// Left factors whose residual falls below this fraction of `σ_1` are treated
/// as belonging to the null space and are completed with a deterministic basis.
const NULL_DIRECTION_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("truncation rank {k} outside [1, {cols}]")]
    RankOutOfRange { k: usize, cols: usize },
    #[error("truncation rank {k} exceeds the row count {rows}; left factors cannot be orthonormal")]
    RankExceedsRows { k: usize, rows: usize },
    #[error("matrix is empty ({rows}x{cols})")]
    Empty { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("complement of a rank-{rank} subspace in R^{cols} is empty")]
    EmptyComplement { rank: usize, cols: usize },
    #[error("effective rank below {rank}: sigma_{rank}/sigma_1 = {ratio:e}")]
    RankDeficient { rank: usize, ratio: f64 },
}

/// Top-k singular triples `U^k Σ^k (H^k)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    /// `d x k`, orthonormal columns.
    pub left_factors: Matrix,
    /// Nonincreasing, nonnegative.
    pub singular_values: DVector<f64>,
    /// `N x k`, orthonormal columns.
    pub right_factors: Matrix,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `U^k Σ^k (H^k)ᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let mut scaled = self.left_factors.clone();
        for (mut col, &s) in scaled.column_iter_mut().zip(self.singular_values.iter()) {
            col *= s;
        }
        scaled * self.right_factors.transpose()
    }

    /// `M H^k (H^k)ᵀ` for an arbitrary `M` with matching column count.
    pub fn project_rows(&self, m: &Matrix) -> Matrix {
        let h = &self.right_factors;
        (m * h) * h.transpose()
    }
}

/// Orthonormal basis of the orthogonal complement of a top-r right singular
/// subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceComplement {
    /// `N x (N - r)`, orthonormal columns.
    pub basis: Matrix,
    pub rank: usize,
}

impl SubspaceComplement {
    /// Zero-width complement of a full-rank (`r = N`) subspace.
    pub fn empty(cols: usize) -> Self {
        SubspaceComplement {
            basis: Matrix::zeros(cols, 0),
            rank: cols,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.ncols() == 0
    }

    /// `M B Bᵀ`.
    pub fn project(&self, m: &Matrix) -> Result<Matrix, LinalgError> {
        self.check_cols(m)?;
        Ok((m * &self.basis) * self.basis.transpose())
    }

    fn check_cols(&self, m: &Matrix) -> Result<(), LinalgError> {
        if m.ncols() != self.basis.nrows() {
            return Err(LinalgError::DimensionMismatch {
                expected: (m.nrows(), self.basis.nrows()),
                found: m.shape(),
            });
        }
        Ok(())
    }
}

/// Full right spectrum of `m`: singular values sorted nonincreasing and the
/// matching `N x N` orthogonal matrix of sign-canonical right singular vectors.
struct RightSpectrum {
    sigma: Vec<f64>,
    vectors: Matrix,
}

fn validate(m: &Matrix) -> Result<(), LinalgError> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(LinalgError::Empty {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    Ok(())
}

fn validate_rank(m: &Matrix, k: usize) -> Result<(), LinalgError> {
    validate(m)?;
    if k < 1 || k > m.ncols() {
        return Err(LinalgError::RankOutOfRange { k, cols: m.ncols() });
    }
    Ok(())
}

/// Flip `v` so that its largest-magnitude entry (lowest index on ties) is
/// nonnegative.
fn canonicalize_sign(mut v: nalgebra::DVectorViewMut<'_, f64>) {
    let mut pivot = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            pivot = i;
        }
    }
    if v[pivot] < 0.0 {
        v.neg_mut();
    }
}

fn right_spectrum(m: &Matrix) -> RightSpectrum {
    let n = m.ncols();
    let gram = m.transpose() * m;
    let eig = SymmetricEigen::new(gram);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
        canonicalize_sign(vectors.column_mut(dst));
    }

    let images = m * &vectors;
    let mut sigma: Vec<f64> = images.column_iter().map(|c| c.norm()).collect();

    // Eigenvalue order and norm order only disagree in the noise floor; a stable
    // sort on the norms keeps the eigenvalue order on ties.
    let mut by_norm: Vec<usize> = (0..n).collect();
    by_norm.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    if by_norm.iter().enumerate().any(|(i, &j)| i != j) {
        let reordered = Matrix::from_fn(n, n, |r, c| vectors[(r, by_norm[c])]);
        sigma = by_norm.iter().map(|&j| sigma[j]).collect();
        vectors = reordered;
    }

    RightSpectrum { sigma, vectors }
}

/// Orthogonalize `v` against the first `count` columns of `basis` (two passes
/// of modified Gram-Schmidt).
fn orthogonalize_against(v: &mut DVector<f64>, basis: &Matrix, count: usize) {
    for _ in 0..2 {
        for j in 0..count {
            let q = basis.column(j);
            let proj = q.dot(v);
            v.axpy(-proj, &q, 1.0);
        }
    }
}

/// Top-k singular triples of `m`.
pub fn truncated_svd(m: &Matrix, k: usize) -> Result<TruncatedSvd, LinalgError> {
    validate_rank(m, k)?;
    let d = m.nrows();
    if k > d {
        return Err(LinalgError::RankExceedsRows { k, rows: d });
    }
    let spectrum = right_spectrum(m);
    let right = spectrum.vectors.columns(0, k).into_owned();
    let sigma = DVector::from_iterator(k, spectrum.sigma.iter().copied().take(k));

    let scale = spectrum.sigma[0];
    let images = m * &right;
    let mut left = Matrix::zeros(d, k);
    let mut pending = Vec::new();
    for j in 0..k {
        let mut u: DVector<f64> = images.column(j).into_owned();
        orthogonalize_against(&mut u, &left, j);
        let norm = u.norm();
        if scale > 0.0 && norm > NULL_DIRECTION_TOL * scale {
            left.set_column(j, &(u / norm));
        } else {
            pending.push(j);
        }
    }

    // Null directions: complete with the standard basis vector that retains the
    // most mass after orthogonalization (lowest index on ties).
    for j in pending {
        let filled: Vec<usize> = (0..k).filter(|&c| left.column(c).norm() > 0.0).collect();
        let packed = Matrix::from_fn(d, filled.len(), |r, c| left[(r, filled[c])]);
        let mut best: Option<(f64, DVector<f64>)> = None;
        for i in 0..d {
            let mut e = DVector::zeros(d);
            e[i] = 1.0;
            orthogonalize_against(&mut e, &packed, packed.ncols());
            let norm = e.norm();
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, e));
            }
        }
        let (norm, e) = best.expect("d >= 1");
        left.set_column(j, &(e / norm));
    }

    Ok(TruncatedSvd {
        left_factors: left,
        singular_values: sigma,
        right_factors: right,
    })
}

/// Best rank-k approximation `P^k(M) = M H^k (H^k)ᵀ`.
///
/// For `k = N` this returns `M` unchanged (bit for bit).
pub fn project_rank_k(m: &Matrix, k: usize) -> Result<Matrix, LinalgError> {
    validate_rank(m, k)?;
    if k == m.ncols() {
        return Ok(m.clone());
    }
    let spectrum = right_spectrum(m);
    let h = spectrum.vectors.columns(0, k);
    Ok((m * h) * h.transpose())
}

/// Orthonormal basis of the complement of the top-r right singular subspace.
///
/// `r = 0` yields the whole space. `r ≥ N` is rejected; callers needing the
/// full-rank case should use [`SubspaceComplement::empty`].
pub fn row_space_complement(m: &Matrix, r: usize) -> Result<SubspaceComplement, LinalgError> {
    validate(m)?;
    let n = m.ncols();
    if r >= n {
        return Err(LinalgError::EmptyComplement { rank: r, cols: n });
    }
    let spectrum = right_spectrum(m);
    if r > 0 {
        let top = spectrum.sigma[0];
        let ratio = if top > 0.0 { spectrum.sigma[r - 1] / top } else { 0.0 };
        if !(ratio > EFFECTIVE_RANK_TOL) {
            return Err(LinalgError::RankDeficient { rank: r, ratio });
        }
    }
    Ok(trailing_complement(spectrum, r))
}

/// Like [`row_space_complement`] but without the effective-rank check. Used
/// where the matrix is known to be degenerate (e.g. identically zero), in
/// which case any orthonormal complement is valid.
pub fn row_space_complement_unchecked(
    m: &Matrix,
    r: usize,
) -> Result<SubspaceComplement, LinalgError> {
    validate(m)?;
    let n = m.ncols();
    if r >= n {
        return Err(LinalgError::EmptyComplement { rank: r, cols: n });
    }
    Ok(trailing_complement(right_spectrum(m), r))
}

fn trailing_complement(spectrum: RightSpectrum, r: usize) -> SubspaceComplement {
    let n = spectrum.vectors.ncols();
    SubspaceComplement {
        basis: spectrum.vectors.columns(r, n - r).into_owned(),
        rank: r,
    }
}

/// `‖V B Bᵀ‖_F²`, computed as `‖V B‖_F²`.
pub fn misalignment(v: &Matrix, complement: &SubspaceComplement) -> Result<f64, LinalgError> {
    complement.check_cols(v)?;
    if complement.is_empty() {
        return Ok(0.0);
    }
    Ok((v * &complement.basis).norm_squared())
}

/// `‖A − B‖_F² / (dN)`.
pub fn frobenius_mse(a: &Matrix, b: &Matrix) -> Result<f64, LinalgError> {
    if a.shape() != b.shape() {
        return Err(LinalgError::DimensionMismatch {
            expected: a.shape(),
            found: b.shape(),
        });
    }
    let count = (a.nrows() * a.ncols()) as f64;
    if count == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / count)
}
