//! Multi-depth hedged ensemble network.
//!
//! A deep ReLU MLP where the raw input and every hidden layer feed their own
//! softmax head. The ensemble prediction is the ω-weighted mixture of the
//! heads; ω is learned multiplicatively from per-head losses, the network
//! weights by gradient descent on the ω-weighted head losses plus a
//! squared-distance penalty between consecutive hidden representations.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, input, Result};
use crate::numerics::{
    adam_step, check_same_shape, cross_entropy, relu, sgd_step, softmax, AdamState, Matrix,
};

/// Per-head loss ceiling before exponentiation in [`hedge_update`].
pub const HEDGE_LOSS_CAP: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub classes: usize,
    /// Hedge discount rate η.
    pub eta: f64,
    /// Similarity penalty weight λ.
    pub lambda: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Minimum ensemble weight; `None` means `1e-4 / (N + 1)`.
    pub weight_floor: Option<f64>,
    /// Renormalize ω to sum to one after every hedge step.
    pub normalize_weights: bool,
}

impl NetworkConfig {
    pub fn new(input_dim: usize, classes: usize) -> Self {
        Self {
            input_dim,
            hidden_layers: 15,
            width: 30,
            classes,
            eta: 0.01,
            lambda: 0.1,
            learning_rate: 0.01,
            optimizer: OptimizerKind::Adam,
            weight_floor: None,
            normalize_weights: true,
        }
    }

    /// Number of heads, N + 1.
    pub fn heads(&self) -> usize {
        self.hidden_layers + 1
    }

    pub fn floor(&self) -> f64 {
        self.weight_floor.unwrap_or(1e-4 / self.heads() as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return config("input dimension must be positive");
        }
        if self.hidden_layers < 1 {
            return config("need at least one hidden layer");
        }
        if self.width < 1 {
            return config("hidden width must be positive");
        }
        if self.classes < 2 {
            return config("need at least two classes");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return config(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return config(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return config(format!("learning rate must be non-negative, got {}", self.learning_rate));
        }
        let floor = self.floor();
        if !(floor >= 0.0 && floor * (self.heads() as f64) < 1.0) {
            return config(format!("weight floor {floor} too large for {} heads", self.heads()));
        }
        Ok(())
    }
}

/// All trainable matrices. `hidden[n-1]` is W_n, `heads[n]` is θ_n; every
/// matrix carries its bias in the last column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub hidden: Vec<Matrix>,
    pub heads: Vec<Matrix>,
}

/// Gradient carrier, shape-congruent with [`NetworkParams`].
pub type Gradients = NetworkParams;

impl NetworkParams {
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        let (d, u, c) = (cfg.input_dim, cfg.width, cfg.classes);
        let hidden = (0..cfg.hidden_layers)
            .map(|n| Matrix::zeros(u, if n == 0 { d } else { u } + 1))
            .collect();
        let heads = (0..cfg.heads())
            .map(|n| Matrix::zeros(c, if n == 0 { d } else { u } + 1))
            .collect();
        Self { hidden, heads }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self { hidden: self.hidden.iter().map(z).collect(), heads: self.heads.iter().map(z).collect() }
    }

    pub fn input_dim(&self) -> usize {
        self.heads[0].cols() - 1
    }

    pub fn classes(&self) -> usize {
        self.heads[0].rows()
    }

    pub fn matrices(&self) -> impl Iterator<Item = &Matrix> {
        self.hidden.iter().chain(self.heads.iter())
    }

    pub fn matrices_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.hidden.iter_mut().chain(self.heads.iter_mut())
    }

    pub fn check_congruent(&self, other: &Self) -> Result<()> {
        if self.hidden.len() != other.hidden.len() || self.heads.len() != other.heads.len() {
            return input("parameter sets have different layer counts");
        }
        self.matrices().zip(other.matrices()).try_for_each(|(a, b)| check_same_shape(a, b))
    }

    /// `self += alpha * other` over every matrix.
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.check_congruent(other)?;
        for (a, b) in self.matrices_mut().zip(other.matrices()) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.matrices_mut().for_each(|m| m.scale(alpha));
    }

    pub fn squared_norm(&self) -> f64 {
        self.matrices().map(Matrix::squared_norm).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().all(Matrix::is_finite)
    }
}

/// Forward-pass record: `hidden[0]` is the input x, `hidden[n]` is h_n,
/// `probs[n]` is head n's class distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    pub hidden: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights(Vec<f64>);

impl EnsembleWeights {
    pub fn uniform(heads: usize) -> Self {
        Self(vec![1.0 / heads as f64; heads])
    }

    /// Wraps raw weights without normalizing them.
    pub fn from_raw(w: Vec<f64>) -> Self {
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let fan_in = cols - 1;
    let bound = (6.0 / (fan_in + rows) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, c| if c == fan_in { 0.0 } else { rng.gen_range(-bound..=bound) })
}

/// Glorot-uniform weights, zero biases, uniform ω.
pub fn init_network(cfg: &NetworkConfig, seed: u64) -> Result<(NetworkParams, EnsembleWeights)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::zeros(cfg);
    for m in params.matrices_mut() {
        *m = xavier(&mut rng, m.rows(), m.cols());
    }
    Ok((params, EnsembleWeights::uniform(cfg.heads())))
}

pub fn forward(params: &NetworkParams, x: &[f64]) -> Result<LayerActivations> {
    if x.len() != params.input_dim() {
        return input(format!("expected {} features, got {}", params.input_dim(), x.len()));
    }
    let mut hidden = Vec::with_capacity(params.hidden.len() + 1);
    hidden.push(x.to_vec());
    for w in &params.hidden {
        let next = relu(&w.affine(hidden.last().unwrap()));
        hidden.push(next);
    }
    let probs = params.heads.iter().zip(&hidden).map(|(theta, h)| softmax(&theta.affine(h))).collect();
    Ok(LayerActivations { hidden, probs })
}

/// `F(x) = Σ ω_n f_n`.
pub fn predict_ensemble(acts: &LayerActivations, weights: &EnsembleWeights) -> Vec<f64> {
    let mut out = vec![0.0; acts.probs[0].len()];
    for (f, &w) in acts.probs.iter().zip(weights.as_slice()) {
        for (o, &p) in out.iter_mut().zip(f) {
            *o += w * p;
        }
    }
    out
}

/// Mean squared distance between consecutive hidden layers, h_1..h_N.
fn similarity_loss(acts: &LayerActivations) -> f64 {
    let n = acts.hidden.len() - 1;
    if n < 2 {
        return 0.0;
    }
    let total: f64 = acts.hidden[1..]
        .windows(2)
        .map(|p| p[0].iter().zip(&p[1]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    total / (n - 1) as f64
}

/// Composite loss and the per-head cross-entropies that drive the hedge step.
pub fn total_loss(
    acts: &LayerActivations,
    weights: &EnsembleWeights,
    label: usize,
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    let per_head = acts.probs.iter().map(|f| cross_entropy(f, label)).collect::<Result<Vec<_>>>()?;
    let pred: f64 = per_head.iter().zip(weights.as_slice()).map(|(l, w)| l * w).sum();
    let sim = if lambda == 0.0 { 0.0 } else { lambda * similarity_loss(acts) };
    Ok((pred + sim, per_head))
}

/// Exact gradient of [`total_loss`] with ω held constant.
pub fn backward(
    params: &NetworkParams,
    acts: &LayerActivations,
    weights: &EnsembleWeights,
    label: usize,
    lambda: f64,
) -> Result<Gradients> {
    let classes = params.classes();
    if label >= classes {
        return input(format!("label {label} out of range for {classes} classes"));
    }
    let depth = params.hidden.len();
    let mut grads = params.zeros_like();
    // dL/dh_n accumulated from heads and the similarity term; index 0 unused.
    let mut dh: Vec<Vec<f64>> = acts.hidden.iter().map(|h| vec![0.0; h.len()]).collect();

    for (n, (&w, f)) in weights.as_slice().iter().zip(&acts.probs).enumerate() {
        if w == 0.0 {
            continue;
        }
        let mut g = f.iter().map(|p| w * p).collect::<Vec<_>>();
        g[label] -= w;
        grads.heads[n].add_outer_affine(&g, &acts.hidden[n]);
        if n > 0 {
            let back = params.heads[n].affine_input_grad(&g);
            dh[n].iter_mut().zip(back).for_each(|(a, b)| *a += b);
        }
    }

    if lambda != 0.0 && depth >= 2 {
        let c = 2.0 * lambda / (depth - 1) as f64;
        for n in 1..depth {
            for i in 0..dh[n].len() {
                let diff = c * (acts.hidden[n][i] - acts.hidden[n + 1][i]);
                dh[n][i] += diff;
                dh[n + 1][i] -= diff;
            }
        }
    }

    for n in (1..=depth).rev() {
        let dz: Vec<f64> = dh[n]
            .iter()
            .zip(&acts.hidden[n])
            .map(|(&g, &h)| if h > 0.0 { g } else { 0.0 })
            .collect();
        if dz.iter().all(|&g| g == 0.0) {
            continue;
        }
        grads.hidden[n - 1].add_outer_affine(&dz, &acts.hidden[n - 1]);
        if n > 1 {
            let back = params.hidden[n - 1].affine_input_grad(&dz);
            dh[n - 1].iter_mut().zip(back).for_each(|(a, b)| *a += b);
        }
    }
    Ok(grads)
}

/// Multiplicative ω update: discount by `exp(-η·loss)`, then enforce the
/// floor and (optionally) renormalize.
pub fn hedge_update(
    weights: &EnsembleWeights,
    losses: &[f64],
    eta: f64,
    floor: f64,
    normalize: bool,
) -> EnsembleWeights {
    let mut w: Vec<f64> = weights
        .as_slice()
        .iter()
        .zip(losses)
        .map(|(&w, &l)| w * (-eta * l.min(HEDGE_LOSS_CAP)).exp())
        .collect();
    if !normalize {
        w.iter_mut().for_each(|v| *v = v.max(floor));
        return EnsembleWeights(w);
    }
    project_with_floor(&mut w, floor);
    EnsembleWeights(w)
}

/// Rescales `w` onto the simplex while keeping every entry ≥ `floor`. Entries
/// pinned at the floor stay there; the rest share the remaining mass in
/// proportion to their current values.
fn project_with_floor(w: &mut [f64], floor: f64) {
    let k = w.len();
    let mut pinned = vec![false; k];
    loop {
        let n_pinned = pinned.iter().filter(|&&p| p).count();
        let free_mass = 1.0 - floor * n_pinned as f64;
        let free_sum: f64 = w.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(v, _)| v).sum();
        let mut changed = false;
        for i in 0..k {
            if pinned[i] {
                w[i] = floor;
                continue;
            }
            w[i] = if free_sum > 0.0 {
                w[i] * free_mass / free_sum
            } else {
                free_mass / (k - n_pinned) as f64
            };
            if w[i] < floor {
                pinned[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

/// Optimizer moments for every parameter matrix (empty for SGD).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub adam: Vec<AdamState>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &NetworkParams) -> Self {
        let adam = match kind {
            OptimizerKind::Adam => params.matrices().map(AdamState::for_param).collect(),
            OptimizerKind::Sgd => Vec::new(),
        };
        Self { kind, adam }
    }
}

pub fn apply_update(
    params: &mut NetworkParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    params.check_congruent(grads)?;
    match state.kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.matrices_mut().zip(grads.matrices()) {
                sgd_step(p, g, lr)?;
            }
        }
        OptimizerKind::Adam => {
            if state.adam.len() != params.hidden.len() + params.heads.len() {
                return input("optimizer state does not match parameter count");
            }
            for ((p, g), s) in params.matrices_mut().zip(grads.matrices()).zip(state.adam.iter_mut()) {
                adam_step(p, g, s, lr)?;
            }
        }
    }
    Ok(())
}

/// A network together with its ensemble weights and optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeNet {
    pub config: NetworkConfig,
    pub params: NetworkParams,
    pub weights: EnsembleWeights,
    pub optimizer: OptimizerState,
}

impl HedgeNet {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        let (params, weights) = init_network(&config, seed)?;
        let optimizer = OptimizerState::new(config.optimizer, &params);
        Ok(Self { config, params, weights, optimizer })
    }

    pub fn forward(&self, x: &[f64]) -> Result<LayerActivations> {
        forward(&self.params, x)
    }

    pub fn predict_proba(&self, acts: &LayerActivations) -> Vec<f64> {
        predict_ensemble(acts, &self.weights)
    }

    /// Hedge step on ω from the losses recorded in `acts`; returns the per-head losses.
    pub fn hedge(&mut self, acts: &LayerActivations, label: usize) -> Result<Vec<f64>> {
        let (_, per_head) = total_loss(acts, &self.weights, label, 0.0)?;
        self.weights = hedge_update(
            &self.weights,
            &per_head,
            self.config.eta,
            self.config.floor(),
            self.config.normalize_weights,
        );
        Ok(per_head)
    }

    /// One optimizer step on the composite loss at the current ω.
    pub fn train_step(&mut self, acts: &LayerActivations, label: usize) -> Result<()> {
        let grads = backward(&self.params, acts, &self.weights, label, self.config.lambda)?;
        apply_update(&mut self.params, &grads, &mut self.optimizer, self.config.learning_rate)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let net: Self = serde_json::from_reader(file)?;
        net.config.validate()?;
        if net.params.check_congruent(&NetworkParams::zeros(&net.config)).is_err() {
            return config("checkpoint parameters do not match the stored configuration");
        }
        Ok(net)
    }
}
