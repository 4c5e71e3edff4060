//! Diagonal-plus-low-rank covariance algebra.
//!
//! `Σ = diag(Λ) + ΦΦᵀ` is inverted by starting from `diag(Λ)⁻¹` and folding
//! in one rank-1 Sherman-Morrison update per column of `Φ`, left to right.
//! The log-determinant is accumulated alongside with the matrix determinant
//! lemma. Both run on tape primitives so gradients reach `Λ` and `Φ`.

mod eigen;

pub use eigen::{symmetric_eigen, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// `(Σ⁻¹, log|Σ|)` for `Σ = diag(diag) + factors·factorsᵀ`, recorded on the tape.
///
/// `diag` has shape `[d]`, `factors` `[d, r]` (`r` may be zero).
pub fn recursive_inverse_logdet<'t>(diag: Var<'t>, factors: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let dshape = diag.shape();
    let fshape = factors.shape();
    if dshape.len() != 1 || fshape.len() != 2 || fshape[0] != dshape[0] {
        return Err(Error::shape("recursive_inverse", &dshape, &fshape));
    }
    if let Some(bad) = diag.value().data().iter().find(|v| !(**v > 0.0)) {
        return Err(Error::invalid("recursive_inverse", format!("diagonal entry {bad} is not positive")));
    }
    let (d, rank) = (dshape[0], fshape[1]);
    let tape = diag.tape();

    let reciprocal = tape.scalar(1.0).div(diag)?.reshape(&[1, d])?;
    let mut inverse = tape.constant(Tensor::eye(d)).mul(reciprocal)?;
    let mut logdet = diag.log().sum_all();

    for j in 0..rank {
        let phi = factors.slice(1, j, 1)?;
        let u = inverse.matmul(phi)?;
        let denom = phi.t()?.matmul(u)?.add_scalar(1.0);
        let dv = denom.value().item();
        if !(dv > 0.0) {
            return Err(Error::Invariant(format!(
                "Sherman-Morrison denominator {dv} at column {j} is not positive"
            )));
        }
        inverse = inverse.sub(u.matmul(u.t()?)?.div(denom)?)?;
        logdet = logdet.add(denom.log().reshape(&[])?)?;
    }
    Ok((inverse, logdet))
}

/// `Σ⁻¹` by the column-order rank-1 recursion.
pub fn recursive_inverse(diag: &[f64], factors: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let (inv, _) = recursive_inverse_logdet(tape.constant(Tensor::vector(diag.to_vec())), tape.constant(factors.clone()))?;
    let value = (*inv.value()).clone();
    Ok(value)
}

/// `log|Σ|` by the determinant-lemma recursion.
pub fn recursive_logdet(diag: &[f64], factors: &Tensor) -> Result<f64> {
    let tape = Tape::new();
    let (_, logdet) =
        recursive_inverse_logdet(tape.constant(Tensor::vector(diag.to_vec())), tape.constant(factors.clone()))?;
    let value = logdet.value().item();
    Ok(value)
}

/// A class covariance `diag(Λ) + ΦΦᵀ` with its inverse and log-determinant cached.
#[derive(Clone, Debug)]
pub struct LowRankCovariance {
    diag: Vec<f64>,
    factors: Tensor,
    inverse: Tensor,
    logdet: f64,
}

impl LowRankCovariance {
    pub fn new(diag: Vec<f64>, factors: Tensor) -> Result<Self> {
        if factors.ndim() != 2 || factors.rows() != diag.len() {
            return Err(Error::shape("build_covariance", &[diag.len()], factors.shape()));
        }
        let tape = Tape::new();
        let (inv, logdet) =
            recursive_inverse_logdet(tape.constant(Tensor::vector(diag.clone())), tape.constant(factors.clone()))?;
        let inverse = (*inv.value()).clone();
        let logdet = logdet.value().item();
        Ok(LowRankCovariance {
            diag,
            factors,
            inverse,
            logdet,
        })
    }

    /// Diagonal-only covariance (`r = 0`).
    pub fn diagonal(diag: Vec<f64>) -> Result<Self> {
        let d = diag.len();
        Self::new(diag, Tensor::zeros(&[d, 0]))
    }

    pub fn identity(d: usize) -> Self {
        Self::diagonal(vec![1.0; d]).expect("identity is a valid covariance")
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn rank(&self) -> usize {
        self.factors.cols()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn factors(&self) -> &Tensor {
        &self.factors
    }

    /// Cached `Σ⁻¹` (the precision matrix).
    pub fn inverse(&self) -> &Tensor {
        &self.inverse
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// Dense `Σ`.
    pub fn dense(&self) -> Tensor {
        let mut sigma = self
            .factors
            .matmul(&self.factors.transpose().expect("2-D"))
            .expect("conforming");
        for (i, v) in self.diag.iter().enumerate() {
            let cur = sigma.at(i, i);
            sigma.set(i, i, cur + v);
        }
        sigma
    }

    /// `δᵀ Σ⁻¹ δ`.
    pub fn mahalanobis_sq(&self, delta: &[f64]) -> Result<f64> {
        quadratic_form(&self.inverse, delta)
    }
}

/// `δᵀ A δ` for a square `A`.
pub fn quadratic_form(a: &Tensor, delta: &[f64]) -> Result<f64> {
    let d = delta.len();
    if a.ndim() != 2 || a.rows() != d || a.cols() != d {
        return Err(Error::shape("mahalanobis_sq", a.shape(), &[d]));
    }
    let mut total = 0.0;
    for i in 0..d {
        let row = a.row(i);
        let inner: f64 = row.iter().zip(delta).map(|(x, y)| x * y).sum();
        total += delta[i] * inner;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_without_factors() {
        let cov = LowRankCovariance::diagonal(vec![1.0, 1.0]).unwrap();
        assert_eq!(*cov.inverse(), Tensor::eye(2));
        assert_eq!(cov.logdet(), 0.0);
        assert_eq!(cov.rank(), 0);
    }

    #[test]
    fn rank_one_on_axis() {
        let factors = Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap();
        let cov = LowRankCovariance::new(vec![1.0, 1.0], factors).unwrap();
        assert_eq!(cov.dense(), Tensor::diag(&[2.0, 1.0]));
        assert!(cov.inverse().max_abs_diff(&Tensor::diag(&[0.5, 1.0])) < 1e-15);
        assert!((cov.logdet() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn diagonal_inverse_and_logdet() {
        let empty = Tensor::zeros(&[2, 0]);
        let inv = recursive_inverse(&[2.0, 4.0], &empty).unwrap();
        assert_eq!(inv, Tensor::diag(&[0.5, 0.25]));
        assert!((recursive_logdet(&[2.0, 4.0], &empty).unwrap() - 8f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn non_positive_diag_is_rejected() {
        let err = LowRankCovariance::diagonal(vec![1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument { .. }));
        assert!(LowRankCovariance::diagonal(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn mahalanobis_with_identity() {
        let cov = LowRankCovariance::identity(2);
        assert_eq!(cov.mahalanobis_sq(&[3.0, 4.0]).unwrap(), 25.0);
        assert_eq!(cov.mahalanobis_sq(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(cov.mahalanobis_sq(&[1.0]).is_err());
    }

    #[test]
    fn gradients_flow_into_diag_and_factors() {
        let tape = Tape::new();
        let diag = tape.leaf(Tensor::vector(vec![0.5, 2.0]));
        let factors = tape.leaf(Tensor::matrix(2, 1, vec![0.3, -0.7]).unwrap());
        let (inv, logdet) = recursive_inverse_logdet(diag, factors).unwrap();
        let loss = inv.sum_all().add(logdet).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(diag).unwrap().data().iter().all(|g| g.is_finite() && *g != 0.0));
        assert!(grads.get(factors).unwrap().data().iter().all(|g| g.is_finite() && *g != 0.0));
    }
}
