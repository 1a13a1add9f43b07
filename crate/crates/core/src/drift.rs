//! Error-rate drift detection without a warning level.
//!
//! Tracks the running error probability `p` and its standard error
//! `s = sqrt(p(1-p)/t)`, remembers the point where `p + s` was smallest and
//! signals drift once `p + s > p_min + k·s_min`. The comparison is strict so
//! an error-free stream (where every term is zero) stays stable.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftStatus {
    Stable,
    Drift,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Observations required before minima are recorded or drift is reported.
    pub min_instances: u64,
    /// Threshold multiplier on the recorded standard error.
    pub k: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { min_instances: 30, k: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftDetector {
    pub config: DetectorConfig,
    t: u64,
    p: f64,
    s: f64,
    p_min: f64,
    s_min: f64,
}

impl DriftDetector {
    pub fn new(config: DetectorConfig) -> Self {
        Self { config, t: 0, p: 0.0, s: 0.0, p_min: f64::INFINITY, s_min: f64::INFINITY }
    }

    pub fn observe(&mut self, error: bool) -> DriftStatus {
        self.t += 1;
        let e = if error { 1.0 } else { 0.0 };
        self.p += (e - self.p) / self.t as f64;
        self.s = (self.p * (1.0 - self.p) / self.t as f64).sqrt();

        if self.t < self.config.min_instances {
            return DriftStatus::Stable;
        }
        if self.p + self.s < self.p_min + self.s_min {
            self.p_min = self.p;
            self.s_min = self.s;
        }
        if self.p + self.s > self.threshold() {
            DriftStatus::Drift
        } else {
            DriftStatus::Stable
        }
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.config);
    }

    /// `p_min + k·s_min`; infinite until minima have been recorded.
    pub fn threshold(&self) -> f64 {
        self.p_min + self.config.k * self.s_min
    }

    pub fn instances(&self) -> u64 {
        self.t
    }

    pub fn error_rate(&self) -> f64 {
        self.p
    }

    pub fn std_error(&self) -> f64 {
        self.s
    }

    pub fn minima(&self) -> (f64, f64) {
        (self.p_min, self.s_min)
    }
}

impl Default for DriftDetector {
    fn default() -> Self {
        Self::new(DetectorConfig::default())
    }
}
