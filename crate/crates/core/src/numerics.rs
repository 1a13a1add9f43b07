//! Dense f64 kernels shared by every learner: a row-major matrix, the
//! activation/loss primitives and the Adam / SGD parameter steps.

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};

/// Probability floor used by [`cross_entropy`].
pub const PROB_CLIP: f64 = 1e-12;

/// Row-major dense matrix. Dimensions are fixed at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return input(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · [x; 1]`: the last column is treated as a bias.
    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len() + 1, self.cols);
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let (w, b) = row.split_at(x.len());
                dot(w, x) + b[0]
            })
            .collect()
    }

    /// `A[:, ..n]ᵀ · g` where `n = cols - 1`, i.e. the backward pass of
    /// [`Matrix::affine`] with respect to its input.
    pub fn affine_input_grad(&self, g: &[f64]) -> Vec<f64> {
        debug_assert_eq!(g.len(), self.rows);
        let n = self.cols - 1;
        let mut out = vec![0.0; n];
        for (r, &gr) in g.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(&self.row(r)[..n]) {
                *o += gr * w;
            }
        }
        out
    }

    /// `self += g ⊗ [x; 1]`, the weight gradient of [`Matrix::affine`].
    pub fn add_outer_affine(&mut self, g: &[f64], x: &[f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(x.len() + 1, self.cols);
        for (r, &gr) in g.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            let row = self.row_mut(r);
            let (w, b) = row.split_at_mut(x.len());
            for (wv, &xv) in w.iter_mut().zip(x) {
                *wv += gr * xv;
            }
            b[0] += gr;
        }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        check_same_shape(self, other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

pub(crate) fn check_same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return input(format!("shape mismatch: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// `-ln(max(dist[label], 1e-12))`.
pub fn cross_entropy(dist: &[f64], label: usize) -> Result<f64> {
    match dist.get(label) {
        Some(&p) => Ok(-p.max(PROB_CLIP).ln()),
        None => input(format!("label {label} out of range for {} classes", dist.len())),
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for one parameter matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
    pub step: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, hyper: AdamHyper) -> Self {
        Self { m: Matrix::zeros(rows, cols), v: Matrix::zeros(rows, cols), step: 0, hyper }
    }

    pub fn for_param(param: &Matrix) -> Self {
        Self::new(param.rows(), param.cols(), AdamHyper::default())
    }
}

/// One bias-corrected Adam step, in place.
pub fn adam_step(param: &mut Matrix, grad: &Matrix, state: &mut AdamState, lr: f64) -> Result<()> {
    check_same_shape(param, grad)?;
    check_same_shape(param, &state.m)?;
    let AdamHyper { beta1, beta2, eps } = state.hyper;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let m = state.m.as_mut_slice();
    let v = state.v.as_mut_slice();
    for (i, (p, &g)) in param.as_mut_slice().iter_mut().zip(grad.as_slice()).enumerate() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// `param -= lr * grad`.
pub fn sgd_step(param: &mut Matrix, grad: &Matrix, lr: f64) -> Result<()> {
    param.axpy(-lr, grad)
}
