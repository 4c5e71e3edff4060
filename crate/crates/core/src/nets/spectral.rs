use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::tensor::{Bound, ParamId, ParamStore, Tensor, Var};

const NORM_FLOOR: f64 = 1e-12;

/// Affine layer `x Ŵᵀ + b`. With a bound `c`, the weight is rescaled to
/// `Ŵ = W · min(1, c/σ̂)` where `σ̂` is a persistent one-step power-iteration
/// estimate of `‖W‖₂`; `σ̂` is a constant for the backward pass.
#[derive(Clone, Debug)]
pub struct SpectralLinear {
    name: String,
    weight: ParamId,
    bias: ParamId,
    in_dim: usize,
    out_dim: usize,
    bound: Option<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

fn normalize(mut x: Vec<f64>) -> Vec<f64> {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
    x.iter_mut().for_each(|v| *v /= n);
    x
}

fn mat_vec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows()).map(|i| w.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn mat_t_vec(w: &Tensor, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (i, yi) in y.iter().enumerate() {
        for (o, wij) in out.iter_mut().zip(w.row(i)) {
            *o += yi * wij;
        }
    }
    out
}

/// `uᵀ W v`.
fn bilinear(w: &Tensor, u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(mat_vec(w, v)).map(|(a, b)| a * b).sum()
}

impl SpectralLinear {
    /// PyTorch-style uniform init in `±1/√in`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bound: Option<f64>,
        rng: &mut impl Rng,
    ) -> Self {
        let k = 1.0 / (in_dim as f64).sqrt();
        let w: Vec<f64> = (0..in_dim * out_dim).map(|_| rng.random_range(-k..k)).collect();
        let b: Vec<f64> = (0..out_dim).map(|_| rng.random_range(-k..k)).collect();
        let weight = store.insert(format!("{name}.weight"), Tensor::matrix(out_dim, in_dim, w).expect("sized"));
        let bias = store.insert(format!("{name}.bias"), Tensor::vector(b));
        let u = normalize((0..out_dim).map(|_| rng.sample(StandardNormal)).collect());
        let v = normalize((0..in_dim).map(|_| rng.sample(StandardNormal)).collect());
        SpectralLinear {
            name: name.to_string(),
            weight,
            bias,
            in_dim,
            out_dim,
            bound,
            u,
            v,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    /// Advances the persistent `(u, v)` pair by `iters` power iterations on `w`.
    pub fn power_iterate(&mut self, w: &Tensor, iters: usize) {
        for _ in 0..iters {
            self.v = normalize(mat_t_vec(w, &self.u));
            self.u = normalize(mat_vec(w, &self.v));
        }
    }

    /// Current estimate `uᵀ W v` of the spectral norm.
    pub fn sigma_estimate(&self, w: &Tensor) -> f64 {
        bilinear(w, &self.u, &self.v)
    }

    /// Factor applied to `W` in forward: `min(1, c/σ̂)`, or 1 without a bound.
    pub fn scale_for(&self, sigma: f64) -> f64 {
        match self.bound {
            Some(c) if sigma > c => c / sigma,
            _ => 1.0,
        }
    }

    /// The weight forward would use in evaluation mode.
    pub fn effective_weight(&self, store: &ParamStore) -> Tensor {
        let w = store.get(self.weight);
        let s = self.scale_for(self.sigma_estimate(w));
        w.map(|x| x * s)
    }

    pub fn forward<'t>(&mut self, params: &Bound<'t>, x: Var<'t>, train: bool) -> Result<Var<'t>> {
        let w = params.var(self.weight);
        let w_eff = if self.bound.is_some() {
            let value = w.value();
            if train {
                self.power_iterate(&value, 1);
            }
            let s = self.scale_for(self.sigma_estimate(&value));
            if s < 1.0 {
                w.scale(s)
            } else {
                w
            }
        } else {
            w
        };
        x.matmul(w_eff.t()?)?.add(params.var(self.bias))
    }

    pub fn buffers(&self) -> Vec<(String, Tensor)> {
        if self.bound.is_none() {
            return Vec::new();
        }
        vec![
            (format!("{}.u", self.name), Tensor::vector(self.u.clone())),
            (format!("{}.v", self.name), Tensor::vector(self.v.clone())),
        ]
    }

    pub fn load_buffer(&mut self, name: &str, value: &Tensor) -> bool {
        let target = if name == format!("{}.u", self.name) && value.numel() == self.out_dim {
            &mut self.u
        } else if name == format!("{}.v", self.name) && value.numel() == self.in_dim {
            &mut self.v
        } else {
            return false;
        };
        target.copy_from_slice(value.data());
        true
    }
}

/// Largest singular value of `w`, from the top eigenvalue of `WᵀW`.
pub fn spectral_norm(w: &Tensor) -> f64 {
    let wtw = w.transpose().expect("2-D").matmul(w).expect("conforming");
    let eig = crate::linalg::symmetric_eigen(&wtw).expect("WᵀW is symmetric");
    eig.values.first().copied().unwrap_or(0.0).max(0.0).sqrt()
}
