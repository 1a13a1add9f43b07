//! First-order bilevel adaptation triggered by drift.
//!
//! Starting from the live parameters Φ, a working copy Θ takes a few SGD
//! steps on the most recent (drifted) instances, then one look-ahead step on
//! a replay batch from episodic memory. Φ is finally moved part of the way
//! towards the look-ahead point: `Φ ← Φ + γ(Θ′ − Φ)`. The working copies are
//! dropped afterwards.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::hedge_net::{backward, forward, total_loss, EnsembleWeights, NetworkParams};
use crate::memory::{EpisodicMemory, StreamInstance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilevelConfig {
    /// Inner / look-ahead SGD rate μ.
    pub inner_rate: f64,
    /// Outer interpolation rate γ.
    pub outer_rate: f64,
    pub inner_steps: usize,
    pub memory_batch: usize,
    pub recent_size: usize,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        Self { inner_rate: 0.01, outer_rate: 0.5, inner_steps: 5, memory_batch: 32, recent_size: 16 }
    }
}

impl BilevelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_rate >= 0.0 && self.inner_rate.is_finite()) {
            return config(format!("inner rate must be non-negative, got {}", self.inner_rate));
        }
        if !(0.0..=1.0).contains(&self.outer_rate) {
            return config(format!("outer rate must lie in [0, 1], got {}", self.outer_rate));
        }
        if self.inner_steps == 0 {
            return config("need at least one inner step");
        }
        if self.recent_size == 0 {
            return config("recent buffer size must be positive");
        }
        Ok(())
    }
}

/// The last few stream instances in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct RecentBuffer {
    capacity: usize,
    items: VecDeque<StreamInstance>,
}

impl RecentBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, items: VecDeque::with_capacity(capacity) }
    }

    pub fn push(&mut self, inst: StreamInstance) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(inst);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &StreamInstance> {
        self.items.iter()
    }

    pub fn get(&self, i: usize) -> Option<&StreamInstance> {
        self.items.get(i)
    }
}

impl FromIterator<StreamInstance> for RecentBuffer {
    fn from_iter<T: IntoIterator<Item = StreamInstance>>(iter: T) -> Self {
        let items: VecDeque<_> = iter.into_iter().collect();
        Self { capacity: items.len().max(1), items }
    }
}

/// A flat parameter space the adaptation steps can move around in.
pub trait ParamSpace: Clone {
    /// `self += alpha * other`.
    fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()>;
    /// `self ← self + gamma·(target − self)`.
    fn lerp_to(&mut self, target: &Self, gamma: f64) -> Result<()>;
    fn distance(&self, other: &Self) -> Result<f64>;
}

/// `a + γ(b − a)`; γ = 1 returns `b` itself since the sum can round away from it.
fn lerp(a: f64, b: f64, gamma: f64) -> f64 {
    if gamma == 1.0 {
        b
    } else {
        a + gamma * (b - a)
    }
}

impl ParamSpace for Vec<f64> {
    fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Input("parameter length mismatch".into()));
        }
        self.iter_mut().zip(other).for_each(|(a, b)| *a += alpha * b);
        Ok(())
    }

    fn lerp_to(&mut self, target: &Self, gamma: f64) -> Result<()> {
        if self.len() != target.len() {
            return Err(Error::Input("parameter length mismatch".into()));
        }
        self.iter_mut().zip(target).for_each(|(a, &b)| *a = lerp(*a, b, gamma));
        Ok(())
    }

    fn distance(&self, other: &Self) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::Input("parameter length mismatch".into()));
        }
        Ok(self.iter().zip(other).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    }
}

impl ParamSpace for NetworkParams {
    fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        NetworkParams::axpy(self, alpha, other)
    }

    fn lerp_to(&mut self, target: &Self, gamma: f64) -> Result<()> {
        self.check_congruent(target)?;
        for (a, b) in self.matrices_mut().zip(target.matrices()) {
            for (x, &y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x = lerp(*x, y, gamma);
            }
        }
        Ok(())
    }

    fn distance(&self, other: &Self) -> Result<f64> {
        self.check_congruent(other)?;
        let mut sq = 0.0;
        for (a, b) in self.matrices().zip(other.matrices()) {
            sq += a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
        Ok(sq.sqrt())
    }
}

/// `steps` SGD steps from a copy of `phi`; `grad(θ, i)` is the gradient used at step i.
pub fn inner_descent<P: ParamSpace>(
    phi: &P,
    steps: usize,
    rate: f64,
    mut grad: impl FnMut(&P, usize) -> Result<P>,
) -> Result<P> {
    let mut theta = phi.clone();
    for i in 0..steps {
        let g = grad(&theta, i)?;
        theta.axpy(-rate, &g)?;
    }
    Ok(theta)
}

/// `θ′ = θ − rate·grad(θ)`.
pub fn lookahead_step<P: ParamSpace>(theta: &P, rate: f64, grad: impl FnOnce(&P) -> Result<P>) -> Result<P> {
    let g = grad(theta)?;
    let mut out = theta.clone();
    out.axpy(-rate, &g)?;
    Ok(out)
}

/// `Φ ← Φ + γ(Θ′ − Φ)`. γ = 0 and γ = 1 reproduce the endpoints bit for bit.
pub fn outer_interpolate<P: ParamSpace>(phi: &P, theta_prime: &P, gamma: f64) -> Result<P> {
    let mut out = phi.clone();
    out.lerp_to(theta_prime, gamma)?;
    Ok(out)
}

fn instance_grad(
    params: &NetworkParams,
    inst: &StreamInstance,
    weights: &EnsembleWeights,
    lambda: f64,
) -> Result<NetworkParams> {
    let acts = forward(params, &inst.features)?;
    backward(params, &acts, weights, inst.label, lambda)
}

fn mean_grad(
    params: &NetworkParams,
    batch: &[StreamInstance],
    weights: &EnsembleWeights,
    lambda: f64,
) -> Result<NetworkParams> {
    let mut acc = params.zeros_like();
    for inst in batch {
        acc.axpy(1.0, &instance_grad(params, inst, weights, lambda)?)?;
    }
    acc.scale(1.0 / batch.len() as f64);
    Ok(acc)
}

/// Mean composite loss over `batch`.
pub fn mean_loss<'a>(
    params: &NetworkParams,
    batch: impl IntoIterator<Item = &'a StreamInstance>,
    weights: &EnsembleWeights,
    lambda: f64,
) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for inst in batch {
        sum += total_loss(&forward(params, &inst.features)?, weights, inst.label, lambda)?.0;
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Θ* after `inner_steps` SGD steps on instances cycled from `buf`.
pub fn inner_adapt(
    phi: &NetworkParams,
    buf: &RecentBuffer,
    weights: &EnsembleWeights,
    lambda: f64,
    cfg: &BilevelConfig,
) -> Result<NetworkParams> {
    if buf.is_empty() {
        return Err(Error::State("recent buffer is empty".into()));
    }
    inner_descent(phi, cfg.inner_steps, cfg.inner_rate, |theta, i| {
        instance_grad(theta, buf.get(i % buf.len()).unwrap(), weights, lambda)
    })
}

/// Θ′ = Θ* − μ·∇ mean loss over the memory batch.
pub fn lookahead(
    theta_star: &NetworkParams,
    batch: &[StreamInstance],
    weights: &EnsembleWeights,
    lambda: f64,
    cfg: &BilevelConfig,
) -> Result<NetworkParams> {
    if batch.is_empty() {
        return Err(Error::State("memory batch is empty".into()));
    }
    lookahead_step(theta_star, cfg.inner_rate, |t| mean_grad(t, batch, weights, lambda))
}

/// Record of one adaptation, for the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptLog {
    pub position: u64,
    pub inner_loss_before: f64,
    pub inner_loss_after: f64,
    /// ‖Θ′ − Φ‖ (or ‖Θ* − Φ‖ when memory was empty).
    pub interpolation_norm: f64,
    pub used_memory: bool,
}

/// Full drift response: inner adaptation, memory look-ahead, interpolation.
/// With an empty memory the inner result is returned unchanged.
pub fn adapt_on_drift<R: Rng + ?Sized>(
    phi: &NetworkParams,
    buf: &RecentBuffer,
    mem: &EpisodicMemory,
    weights: &EnsembleWeights,
    lambda: f64,
    cfg: &BilevelConfig,
    rng: &mut R,
) -> Result<(NetworkParams, AdaptLog)> {
    let theta_star = inner_adapt(phi, buf, weights, lambda, cfg)?;
    let position = buf.iter().last().map_or(0, |x| x.position);
    let inner_loss_before = mean_loss(phi, buf.iter(), weights, lambda)?;
    let inner_loss_after = mean_loss(&theta_star, buf.iter(), weights, lambda)?;

    if mem.is_empty() {
        let interpolation_norm = ParamSpace::distance(&theta_star, phi)?;
        let log = AdaptLog { position, inner_loss_before, inner_loss_after, interpolation_norm, used_memory: false };
        return Ok((theta_star, log));
    }
    let batch = mem.sample_batch(cfg.memory_batch.max(1), rng)?;
    let theta_prime = lookahead(&theta_star, &batch, weights, lambda, cfg)?;
    let interpolation_norm = ParamSpace::distance(&theta_prime, phi)?;
    let updated = outer_interpolate(phi, &theta_prime, cfg.outer_rate)?;
    let log = AdaptLog { position, inner_loss_before, inner_loss_after, interpolation_norm, used_memory: true };
    Ok((updated, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hedge_net::{init_network, NetworkConfig};
    use crate::numerics::Matrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg_net() -> NetworkConfig {
        NetworkConfig { hidden_layers: 2, width: 4, ..NetworkConfig::new(3, 2) }
    }

    fn stream(n: usize, seed: u64) -> Vec<StreamInstance> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y = usize::from(x[0] + x[1] > 0.0);
                StreamInstance::new(x, y, i as u64)
            })
            .collect()
    }

    #[test]
    fn zero_rate_inner_adapt_is_identity() {
        let (phi, w) = init_network(&cfg_net(), 1).unwrap();
        let buf: RecentBuffer = stream(4, 2).into_iter().collect();
        let bc = BilevelConfig { inner_rate: 0.0, ..Default::default() };
        assert_eq!(inner_adapt(&phi, &buf, &w, 0.1, &bc).unwrap(), phi);
        let batch = stream(3, 5);
        assert_eq!(lookahead(&phi, &batch, &w, 0.1, &bc).unwrap(), phi);
    }

    #[test]
    fn empty_inputs_are_state_errors() {
        let (phi, w) = init_network(&cfg_net(), 1).unwrap();
        let bc = BilevelConfig::default();
        assert!(matches!(inner_adapt(&phi, &RecentBuffer::new(4), &w, 0.1, &bc), Err(Error::State(_))));
        assert!(matches!(lookahead(&phi, &[], &w, 0.1, &bc), Err(Error::State(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = adapt_on_drift(&phi, &RecentBuffer::new(4), &EpisodicMemory::new(4), &w, 0.1, &bc, &mut rng);
        assert!(matches!(r, Err(Error::State(_))));
    }

    #[test]
    fn stationary_point_is_fixed() {
        // With ω = 0 and λ = 0 every gradient vanishes.
        let (phi, _) = init_network(&cfg_net(), 3).unwrap();
        let w = EnsembleWeights::from_raw(vec![0.0; 3]);
        let buf: RecentBuffer = stream(5, 1).into_iter().collect();
        let bc = BilevelConfig::default();
        let star = inner_adapt(&phi, &buf, &w, 0.0, &bc).unwrap();
        assert_eq!(star, phi);
        assert_eq!(lookahead(&star, &stream(4, 9), &w, 0.0, &bc).unwrap(), star);
    }

    #[test]
    fn single_inner_step_equals_manual_sgd() {
        let (phi, w) = init_network(&cfg_net(), 4).unwrap();
        let inst = stream(1, 6);
        let buf: RecentBuffer = inst.clone().into_iter().collect();
        let bc = BilevelConfig { inner_steps: 1, inner_rate: 0.07, ..Default::default() };
        let got = inner_adapt(&phi, &buf, &w, 0.1, &bc).unwrap();
        let acts = forward(&phi, &inst[0].features).unwrap();
        let g = backward(&phi, &acts, &w, inst[0].label, 0.1).unwrap();
        let mut expect = phi.clone();
        expect.axpy(-0.07, &g).unwrap();
        assert_eq!(got, expect);

        let looked = lookahead(&phi, &inst, &w, 0.1, &bc).unwrap();
        assert_eq!(looked, expect);
    }

    #[test]
    fn interpolation_endpoints_are_exact() {
        let (phi, _) = init_network(&cfg_net(), 5).unwrap();
        let (theta, _) = init_network(&cfg_net(), 6).unwrap();
        assert_eq!(outer_interpolate(&phi, &theta, 0.0).unwrap(), phi);
        assert_eq!(outer_interpolate(&phi, &theta, 1.0).unwrap(), theta);
        let mid = outer_interpolate(&vec![2.0], &vec![4.0], 0.5).unwrap();
        assert_eq!(mid, vec![3.0]);
        let mut bad = theta.clone();
        bad.heads[0] = Matrix::zeros(1, 1);
        assert!(outer_interpolate(&phi, &bad, 0.5).is_err());
    }

    #[test]
    fn empty_memory_falls_back_to_inner_result() {
        let (phi, w) = init_network(&cfg_net(), 7).unwrap();
        let buf: RecentBuffer = stream(6, 3).into_iter().collect();
        let bc = BilevelConfig { inner_steps: 1, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (got, log) = adapt_on_drift(&phi, &buf, &EpisodicMemory::new(8), &w, 0.1, &bc, &mut rng).unwrap();
        assert_eq!(got, inner_adapt(&phi, &buf, &w, 0.1, &bc).unwrap());
        assert!(!log.used_memory);
        assert_eq!(log.position, 5);
    }

    #[test]
    fn adaptation_does_not_touch_weights_and_is_seeded() {
        let (phi, w) = init_network(&cfg_net(), 8).unwrap();
        let w_before = w.clone();
        let buf: RecentBuffer = stream(16, 4).into_iter().collect();
        let mut mem = EpisodicMemory::new(32);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for inst in stream(100, 5) {
            mem.maybe_insert(inst, &mut rng);
        }
        let run = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            adapt_on_drift(&phi, &buf, &mem, &w, 0.1, &BilevelConfig::default(), &mut r).unwrap()
        };
        assert_eq!(run(11), run(11));
        assert_eq!(w, w_before);
        let (_, log) = run(11);
        assert!(log.used_memory);
        assert!(log.inner_loss_after <= log.inner_loss_before + 1e-9);
    }

    proptest! {
        #[test]
        fn interpolation_composes(
            a in prop::collection::vec(-10.0f64..10.0, 6),
            b in prop::collection::vec(-10.0f64..10.0, 6),
            g1 in 0.0f64..1.0,
            g2 in 0.0f64..1.0,
        ) {
            let once = outer_interpolate(&outer_interpolate(&a, &b, g1).unwrap(), &b, g2).unwrap();
            let direct = outer_interpolate(&a, &b, g1 + g2 - g1 * g2).unwrap();
            for (x, y) in once.iter().zip(&direct) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn zero_inner_rate_makes_adaptation_identity(seed in 0u64..100, gamma in 0.0f64..=1.0) {
            let (phi, w) = init_network(&cfg_net(), seed).unwrap();
            let buf: RecentBuffer = stream(8, seed).into_iter().collect();
            let mut mem = EpisodicMemory::new(8);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for inst in stream(20, seed + 1) {
                mem.maybe_insert(inst, &mut rng);
            }
            let bc = BilevelConfig { inner_rate: 0.0, outer_rate: gamma, ..Default::default() };
            let (out, _) = adapt_on_drift(&phi, &buf, &mem, &w, 0.1, &bc, &mut rng).unwrap();
            prop_assert_eq!(out, phi);
        }
    }
}
