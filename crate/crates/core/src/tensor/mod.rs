//! Dense row-major `f64` arrays and a tape-based reverse-mode autodiff engine.
//!
//! [`Tensor`] is a plain value. Differentiable computation happens on a
//! [`Tape`]: leaves and constants are recorded as [`Var`] handles, every
//! primitive appends a node, and [`Tape::backward`] replays the nodes in
//! reverse to produce [`Gradients`].

mod adam;
pub mod checkpoint;
mod params;
mod tape;

pub use adam::{Adam, AdamConfig, StepOutcome};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::invalid(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Builds a matrix from row slices; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("from_rows", "ragged rows"));
        }
        Tensor::matrix(rows.len(), cols, rows.concat())
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor {
            shape: vec![n, n],
            data,
        }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut t = Tensor::zeros(&[n, n]);
        for (i, v) in values.iter().enumerate() {
            t.data[i * n + i] = *v;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let cols = self.shape[1];
        self.data[i * cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.ndim() != 2 || other.ndim() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let (n, k, m) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; n * m];
        matmul_into(&self.data, &other.data, &mut out, n, k, m);
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.ndim() != 2 {
            return Err(Error::invalid("transpose", format!("expected 2-D, got {:?}", self.shape)));
        }
        let (n, m) = (self.shape[0], self.shape[1]);
        Ok(Tensor {
            shape: vec![m, n],
            data: transpose_data(&self.data, n, m),
        })
    }
}

/// `out += a (n×k) · b (k×m)`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

pub(crate) fn transpose_data(data: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = data[i * m + j];
        }
    }
    out
}

/// Result shape of broadcasting two shapes by the trailing-dimension rule.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i < nd - a.len() { 1 } else { a[i - (nd - a.len())] };
        let db = if i < nd - b.len() { 1 } else { b[i - (nd - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(op, a, b)),
        };
    }
    Ok(out)
}

/// For every flat index of `out_shape`, the flat index into a tensor of
/// shape `in_shape` that broadcasts onto it.
pub(crate) fn broadcast_map(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let nd = out_shape.len();
    let offset = nd - in_shape.len();
    let mut strides = vec![0usize; nd];
    let mut acc = 1;
    for i in (0..in_shape.len()).rev() {
        strides[i + offset] = if in_shape[i] == 1 { 0 } else { acc };
        acc *= in_shape[i];
    }
    let numel: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut idx = vec![0usize; nd];
    for _ in 0..numel {
        map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for d in (0..nd).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

/// Splits a shape around `axis` into (outer, axis length, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Sums `grad` (shape `from`) down to `to`, undoing a broadcast.
pub(crate) fn reduce_to_shape(grad: &[f64], from: &[usize], to: &[usize]) -> Vec<f64> {
    if from == to {
        return grad.to_vec();
    }
    let numel: usize = to.iter().product();
    let mut out = vec![0.0; numel];
    for (g, src) in grad.iter().zip(broadcast_map(to, from)) {
        out[src] += g;
    }
    out
}
