//! Independent reference implementations used as test oracles. Plain
//! `Vec<Vec<f64>>` arithmetic, no shared code with the library's solvers.
#![allow(dead_code)]

use lowrank_td::Matrix;

pub type Dense = Vec<Vec<f64>>;

pub fn to_dense(m: &Matrix) -> Dense {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn from_dense(a: &Dense) -> Matrix {
    let rows = a.len();
    let cols = a.first().map_or(0, Vec::len);
    Matrix::from_fn(rows, cols, |i, j| a[i][j])
}

pub fn frob(a: &Dense) -> f64 {
    a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn frob_diff(a: &Dense, b: &Dense) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)))
        .sum::<f64>()
        .sqrt()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let n = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..n)
                .map(|j| row.iter().enumerate().map(|(l, x)| x * b[l][j]).sum())
                .collect()
        })
        .collect()
}

pub fn transpose(a: &Dense) -> Dense {
    let cols = a.first().map_or(0, Vec::len);
    (0..cols).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

/// Cyclic Jacobi eigensolver for a symmetric matrix. Returns eigenvalues in
/// descending order and the matching eigenvectors as columns.
pub fn jacobi_eigen(sym: &Dense) -> (Vec<f64>, Dense) {
    let n = sym.len();
    let mut a = sym.clone();
    let mut v: Dense = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = a.iter().flatten().map(|x| x * x).sum();
        if off <= 1e-32 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = (0..n).map(|r| order.iter().map(|&i| v[r][i]).collect()).collect();
    (values, vectors)
}

/// Full right-singular system of `m` from the Gram eigensolve: singular
/// values `‖m h_j‖` in Gram-eigenvalue order, and `H` with `h_j` as columns.
pub fn gram_svd(m: &Dense) -> (Vec<f64>, Dense) {
    let gram = matmul(&transpose(m), m);
    let (_, h) = jacobi_eigen(&gram);
    let mh = matmul(m, &h);
    let cols = h.len();
    let sigma = (0..cols).map(|j| mh.iter().map(|row| row[j] * row[j]).sum::<f64>().sqrt()).collect();
    (sigma, h)
}

/// Best rank-k approximation `M H_k H_kᵀ`.
pub fn rank_k_oracle(m: &Dense, k: usize) -> Dense {
    let (_, h) = gram_svd(m);
    let hk: Dense = h.iter().map(|row| row[..k].to_vec()).collect();
    matmul(&matmul(m, &hk), &transpose(&hk))
}

/// Eigenvectors of `MᵀM` beyond the top `r`, as columns.
pub fn null_space_oracle(m: &Dense, r: usize) -> Dense {
    let gram = matmul(&transpose(m), m);
    let (_, h) = jacobi_eigen(&gram);
    h.iter().map(|row| row[r..].to_vec()).collect()
}

/// Gaussian elimination with partial pivoting, one right-hand side per column.
pub fn solve(a: &Dense, b: &Dense) -> Dense {
    let n = a.len();
    let m = b[0].len();
    let mut aug: Dense = a.iter().zip(b).map(|(ra, rb)| ra.iter().chain(rb).copied().collect()).collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs())).unwrap();
        aug.swap(col, pivot);
        for row in col + 1..n {
            let f = aug[row][col] / aug[col][col];
            if f != 0.0 {
                for c in col..n + m {
                    aug[row][c] -= f * aug[col][c];
                }
            }
        }
    }
    let mut x = vec![vec![0.0; m]; n];
    for row in (0..n).rev() {
        for j in 0..m {
            let mut acc = aug[row][n + j];
            for c in row + 1..n {
                acc -= aug[row][c] * x[c][j];
            }
            x[row][j] = acc / aug[row][row];
        }
    }
    x
}

/// `(I − γP)⁻¹ R`.
pub fn value_oracle(p: &Dense, r: &Dense, gamma: f64) -> Dense {
    let n = p.len();
    let a: Dense = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 } - gamma * p[i][j]).collect())
        .collect();
    solve(&a, r)
}

/// Scalar TD sweep: `V'[s][i] = V[s][i] + α (R[s][i] + γ G[next[s]][i] − V[s][i])`.
pub fn td_sweep_oracle(v: &Dense, target: &Dense, reward: &Dense, next: &[usize], gamma: f64, alpha: f64) -> Dense {
    let mut out = v.clone();
    for s in 0..v.len() {
        for i in 0..v[s].len() {
            out[s][i] = v[s][i] + alpha * (reward[s][i] + gamma * target[next[s]][i] - v[s][i]);
        }
    }
    out
}
