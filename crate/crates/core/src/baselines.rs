//! Linear online classifiers used as comparison points.
//!
//! Each algorithm is a binary learner over `[x; 1]` with labels in {−1, +1}.
//! Two-class streams use a single model (class 1 ↔ +1); wider label sets use
//! one-vs-rest with an argmax over per-class scores. The confidence-weighted
//! family keeps a diagonal covariance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{config, input, Error, Result};
use crate::numerics::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Perceptron,
    Romma,
    Ogd,
    Pa,
    Cw,
    Arow,
    Scw,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 7] = [
        BaselineKind::Perceptron,
        BaselineKind::Romma,
        BaselineKind::Ogd,
        BaselineKind::Pa,
        BaselineKind::Cw,
        BaselineKind::Arow,
        BaselineKind::Scw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Perceptron => "perceptron",
            BaselineKind::Romma => "romma",
            BaselineKind::Ogd => "ogd",
            BaselineKind::Pa => "pa",
            BaselineKind::Cw => "cw",
            BaselineKind::Arow => "arow",
            BaselineKind::Scw => "scw",
        }
    }

    fn uses_covariance(self) -> bool {
        matches!(self, BaselineKind::Cw | BaselineKind::Arow | BaselineKind::Scw)
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown baseline `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    /// PA-I aggressiveness C.
    pub pa_c: f64,
    /// AROW regularizer r.
    pub arow_r: f64,
    /// SCW-I aggressiveness C.
    pub scw_c: f64,
    /// SCW confidence level η.
    pub scw_eta: f64,
    /// CW confidence level η.
    pub cw_eta: f64,
    /// OGD base rate; the step at time t is `ogd_lr / sqrt(t)`.
    pub ogd_lr: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self { pa_c: 1.0, arow_r: 1.0, scw_c: 1.0, scw_eta: 0.9, cw_eta: 0.9, ogd_lr: 0.01 }
    }
}

impl BaselineParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [("pa_c", self.pa_c), ("arow_r", self.arow_r), ("scw_c", self.scw_c), ("ogd_lr", self.ogd_lr)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return config(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("scw_eta", self.scw_eta), ("cw_eta", self.cw_eta)] {
            if !(v > 0.5 && v < 1.0) {
                return config(format!("{name} must lie in (0.5, 1), got {v}"));
            }
        }
        Ok(())
    }
}

/// One binary learner: mean weights and (for CW-family) a diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryModel {
    pub w: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: BaselineKind,
    pub params: BaselineParams,
    classes: usize,
    models: Vec<BinaryModel>,
    t: u64,
    /// Φ⁻¹(η) for CW / SCW.
    phi: f64,
}

fn probit(eta: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(eta)
}

impl LinearModel {
    pub fn new(kind: BaselineKind, input_dim: usize, classes: usize, params: BaselineParams) -> Result<Self> {
        params.validate()?;
        if classes < 2 {
            return config("need at least two classes");
        }
        let dim = input_dim + 1;
        let sigma = if kind.uses_covariance() { vec![1.0; dim] } else { Vec::new() };
        let n_models = if classes == 2 { 1 } else { classes };
        let models = vec![BinaryModel { w: vec![0.0; dim], sigma }; n_models];
        let phi = match kind {
            BaselineKind::Cw => probit(params.cw_eta),
            BaselineKind::Scw => probit(params.scw_eta),
            _ => 0.0,
        };
        Ok(Self { kind, params, classes, models, t: 0, phi })
    }

    pub fn models(&self) -> &[BinaryModel] {
        &self.models
    }

    pub fn input_dim(&self) -> usize {
        self.models[0].w.len() - 1
    }

    fn augment(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.input_dim() {
            return input(format!("expected {} features, got {}", self.input_dim(), features.len()));
        }
        let mut x = features.to_vec();
        x.push(1.0);
        Ok(x)
    }

    fn predict_augmented(&self, x: &[f64]) -> usize {
        if self.models.len() == 1 {
            return usize::from(dot(&self.models[0].w, x) > 0.0);
        }
        let scores: Vec<f64> = self.models.iter().map(|m| dot(&m.w, x)).collect();
        crate::numerics::argmax(&scores)
    }

    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        Ok(self.predict_augmented(&self.augment(features)?))
    }

    /// Predicts with the current weights, then learns from `label`.
    pub fn step(&mut self, features: &[f64], label: usize) -> Result<usize> {
        if label >= self.classes {
            return input(format!("label {label} out of range for {} classes", self.classes));
        }
        let x = self.augment(features)?;
        let pred = self.predict_augmented(&x);
        self.t += 1;
        let (kind, params, phi, t) = (self.kind, self.params, self.phi, self.t);
        let binary = self.models.len() == 1;
        for (c, m) in self.models.iter_mut().enumerate() {
            let target = if binary { label == 1 } else { label == c };
            let y = if target { 1.0 } else { -1.0 };
            update(kind, &params, phi, t, m, &x, y);
        }
        Ok(pred)
    }
}

fn update(kind: BaselineKind, p: &BaselineParams, phi: f64, t: u64, m: &mut BinaryModel, x: &[f64], y: f64) {
    let score = dot(&m.w, x);
    let mistake = if y > 0.0 { score <= 0.0 } else { score > 0.0 };
    let xx = dot(x, x);
    match kind {
        BaselineKind::Perceptron => {
            if mistake {
                axpy(&mut m.w, y, x);
            }
        }
        BaselineKind::Romma => {
            if mistake {
                romma(&mut m.w, x, y, score, xx);
            }
        }
        BaselineKind::Ogd => {
            if y * score < 1.0 {
                axpy(&mut m.w, p.ogd_lr / (t as f64).sqrt() * y, x);
            }
        }
        BaselineKind::Pa => {
            let loss = (1.0 - y * score).max(0.0);
            if loss > 0.0 && xx > 0.0 {
                let tau = p.pa_c.min(loss / xx);
                axpy(&mut m.w, tau * y, x);
            }
        }
        BaselineKind::Arow => {
            let margin = y * score;
            if margin < 1.0 {
                let v = confidence(&m.sigma, x);
                let beta = 1.0 / (v + p.arow_r);
                let alpha = (1.0 - margin) * beta;
                shrink(m, x, alpha * y, beta);
            }
        }
        BaselineKind::Cw => {
            let margin = y * score;
            let v = confidence(&m.sigma, x);
            if v <= 0.0 {
                return;
            }
            let psi = 1.0 + phi * phi / 2.0;
            let xi = 1.0 + phi * phi;
            let alpha = ((-margin * psi + (margin * margin * phi.powi(4) / 4.0 + v * phi * phi * xi).sqrt())
                / (v * xi))
                .max(0.0);
            if alpha > 0.0 {
                let beta = cw_beta(alpha, v, phi);
                shrink(m, x, alpha * y, beta);
            }
        }
        BaselineKind::Scw => {
            let margin = y * score;
            let v = confidence(&m.sigma, x);
            let loss = (phi * v.sqrt() - margin).max(0.0);
            if loss > 0.0 && v > 0.0 {
                let psi = 1.0 + phi * phi / 2.0;
                let zeta = 1.0 + phi * phi;
                let alpha = ((-margin * psi + (margin * margin * phi.powi(4) / 4.0 + v * phi * phi * zeta).sqrt())
                    / (v * zeta))
                    .max(0.0)
                    .min(p.scw_c);
                if alpha > 0.0 {
                    let beta = cw_beta(alpha, v, phi);
                    shrink(m, x, alpha * y, beta);
                }
            }
        }
    }
}

fn cw_beta(alpha: f64, v: f64, phi: f64) -> f64 {
    let u = 0.25 * (-alpha * v * phi + (alpha * alpha * v * v * phi * phi + 4.0 * v).sqrt()).powi(2);
    alpha * phi / (u.sqrt() + v * alpha * phi)
}

/// `xᵀ Σ x` for diagonal Σ.
fn confidence(sigma: &[f64], x: &[f64]) -> f64 {
    sigma.iter().zip(x).map(|(s, xi)| s * xi * xi).sum()
}

/// `w += step·Σx`, `Σ −= β (Σx)(Σx)ᵀ` restricted to the diagonal.
fn shrink(m: &mut BinaryModel, x: &[f64], step: f64, beta: f64) {
    for ((w, s), &xi) in m.w.iter_mut().zip(m.sigma.iter_mut()).zip(x) {
        let sx = *s * xi;
        *w += step * sx;
        *s -= beta * sx * sx;
    }
}

fn romma(w: &mut [f64], x: &[f64], y: f64, score: f64, xx: f64) {
    let ww = dot(w, w);
    if ww == 0.0 {
        if xx > 0.0 {
            w.iter_mut().zip(x).for_each(|(wi, xi)| *wi = y * xi / xx);
        }
        return;
    }
    let denom = xx * ww - score * score;
    if denom <= 1e-12 * xx * ww {
        // x parallel to w: fall back to the perceptron step.
        axpy(w, y, x);
        return;
    }
    let c = (xx * ww - y * score) / denom;
    let d = ww * (y - score) / denom;
    w.iter_mut().zip(x).for_each(|(wi, xi)| *wi = c * *wi + d * xi);
}

fn axpy(w: &mut [f64], a: f64, x: &[f64]) {
    w.iter_mut().zip(x).for_each(|(wi, xi)| *wi += a * xi);
}
