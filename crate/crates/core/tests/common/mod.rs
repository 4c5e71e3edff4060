//! Dense reference routines used as independent oracles. Nothing here shares
//! code with the library's recursive or iterative paths.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Dense {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|p| a[i][p] * b[p][j]).sum()).collect())
        .collect()
}

pub fn transpose(a: &Dense) -> Dense {
    let cols = a.first().map_or(0, Vec::len);
    (0..cols).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

/// `diag(lambda) + phi·phiᵀ`, formed densely.
pub fn dense_covariance(lambda: &[f64], phi: &Dense) -> Dense {
    let d = lambda.len();
    let mut s = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            s[i][j] = phi[i].iter().zip(&phi[j]).map(|(a, b)| a * b).sum();
        }
        s[i][i] += lambda[i];
    }
    s
}

/// Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &Dense) -> Dense {
    let n = a.len();
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row != col {
                let f = aug[row][col];
                if f != 0.0 {
                    for k in 0..2 * n {
                        aug[row][k] -= f * aug[col][k];
                    }
                }
            }
        }
    }
    aug.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// log|det A| from an LU factorization with partial pivoting.
pub fn lu_logdet(a: &Dense) -> f64 {
    let n = a.len();
    let mut m = a.clone();
    let mut logdet = 0.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        logdet += p.abs().ln();
        for row in col + 1..n {
            let f = m[row][col] / p;
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    logdet
}

/// Solves `A x = b` by Gaussian elimination.
pub fn solve(a: &Dense, b: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, &bi)| {
        let mut r = r.clone();
        r.push(bi);
        r
    }).collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x
}

pub fn max_abs_diff(a: &Dense, b: &[f64]) -> f64 {
    a.iter().flatten().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Central finite difference of a scalar function at `x`, coordinate `i`.
pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, step: f64) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[i] += step;
    minus[i] -= step;
    (f(&plus) - f(&minus)) / (2.0 * step)
}

/// Relative closeness with an absolute floor.
pub fn grad_close(analytic: f64, numeric: f64, rel: f64, abs_floor: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs_floor || diff <= rel * analytic.abs().max(numeric.abs())
}
