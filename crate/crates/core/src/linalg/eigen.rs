use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-10;

/// Eigenvalues in descending order; column `i` of `vectors` pairs with `values[i]`.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Tensor,
}

impl SymmetricEigen {
    /// `Q diag(values) Qᵀ`.
    pub fn recompose(&self, values: &[f64]) -> Tensor {
        let n = values.len();
        let mut out = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                let s: f64 = (0..n).map(|k| self.vectors.at(i, k) * values[k] * self.vectors.at(j, k)).sum();
                out.set(i, j, s);
            }
        }
        out
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps until the off-diagonal Frobenius norm drops below 1e-12 (relative
/// to the matrix norm when that exceeds one) or 100 sweeps have run.
pub fn symmetric_eigen(matrix: &Tensor) -> Result<SymmetricEigen> {
    if matrix.ndim() != 2 || matrix.rows() != matrix.cols() {
        return Err(Error::invalid("symmetric_eigen", format!("expected a square matrix, got {:?}", matrix.shape())));
    }
    let n = matrix.rows();
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((matrix.at(i, j) - matrix.at(j, i)).abs());
        }
    }
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }

    let mut a: Vec<f64> = matrix.data().to_vec();
    // Symmetrize exactly so rotations act on one consistent matrix.
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = m;
            a[j * n + i] = m;
        }
    }
    let mut v = Tensor::eye(n).into_data();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off < OFF_DIAGONAL_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = Tensor::zeros(&[n, n]);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors.set(row, col, v[row * n + src]);
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix() {
        let eig = symmetric_eigen(&Tensor::diag(&[1.0, 3.0])).unwrap();
        assert_eq!(eig.values, vec![3.0, 1.0]);
        assert_eq!(eig.vectors.at(1, 0).abs(), 1.0);
        assert_eq!(eig.vectors.at(0, 1).abs(), 1.0);
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let eig = symmetric_eigen(&Tensor::eye(4)).unwrap();
        assert!(eig.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rejects_asymmetric() {
        let m = Tensor::matrix(2, 2, vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(matches!(symmetric_eigen(&m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn two_by_two_closed_form() {
        let m = Tensor::matrix(2, 2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let eig = symmetric_eigen(&m).unwrap();
        assert!((eig.values[0] - 3.0).abs() < 1e-14);
        assert!((eig.values[1] - 1.0).abs() < 1e-14);
        assert!(eig.recompose(&eig.values).max_abs_diff(&m) < 1e-14);
    }
}
