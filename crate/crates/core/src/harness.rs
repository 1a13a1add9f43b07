//! Prequential (test-then-train) evaluation of the hedged network and the
//! linear baselines, with metric accumulation and a parallel suite runner.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineKind, BaselineParams, LinearModel};
use crate::bilevel::{adapt_on_drift, AdaptLog, BilevelConfig, RecentBuffer};
use crate::drift::{DetectorConfig, DriftDetector, DriftStatus};
use crate::error::{config, Error, Result};
use crate::hedge_net::{HedgeNet, NetworkConfig, OptimizerKind};
use crate::memory::{EpisodicMemory, StreamInstance};
use crate::numerics::argmax;
use crate::stream::{Standardizer, StreamSource, StreamSpec};

/// Ablation level of the hedged network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BodlVariant {
    /// Similarity penalty and bilevel drift adaptation.
    Full,
    /// Similarity penalty only.
    Similarity,
    /// Neither.
    Base,
}

impl BodlVariant {
    pub fn uses_similarity(self) -> bool {
        !matches!(self, BodlVariant::Base)
    }

    pub fn uses_bilevel(self) -> bool {
        matches!(self, BodlVariant::Full)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LearnerSpec {
    Bodl(BodlVariant),
    Baseline(BaselineKind),
}

impl LearnerSpec {
    pub const ABLATION: [LearnerSpec; 3] = [
        LearnerSpec::Bodl(BodlVariant::Full),
        LearnerSpec::Bodl(BodlVariant::Similarity),
        LearnerSpec::Bodl(BodlVariant::Base),
    ];
}

impl fmt::Display for LearnerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LearnerSpec::Bodl(BodlVariant::Full) => f.write_str("bodl-2"),
            LearnerSpec::Bodl(BodlVariant::Similarity) => f.write_str("bodl-1"),
            LearnerSpec::Bodl(BodlVariant::Base) => f.write_str("bodl-base"),
            LearnerSpec::Baseline(k) => k.fmt(f),
        }
    }
}

impl FromStr for LearnerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bodl-2" | "bodl" => Ok(LearnerSpec::Bodl(BodlVariant::Full)),
            "bodl-1" => Ok(LearnerSpec::Bodl(BodlVariant::Similarity)),
            "bodl-base" | "bodl-0" => Ok(LearnerSpec::Bodl(BodlVariant::Base)),
            other => other.parse().map(LearnerSpec::Baseline),
        }
    }
}

impl Serialize for LearnerSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LearnerSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Network hyperparameters that do not depend on the stream's shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetSettings {
    pub hidden_layers: usize,
    pub width: usize,
    pub eta: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub weight_floor: Option<f64>,
    pub normalize_weights: bool,
}

impl Default for NetSettings {
    fn default() -> Self {
        let c = NetworkConfig::new(1, 2);
        Self {
            hidden_layers: c.hidden_layers,
            width: c.width,
            eta: c.eta,
            lambda: c.lambda,
            learning_rate: c.learning_rate,
            optimizer: c.optimizer,
            weight_floor: c.weight_floor,
            normalize_weights: c.normalize_weights,
        }
    }
}

impl NetSettings {
    pub fn network_config(&self, input_dim: usize, classes: usize, lambda: f64) -> NetworkConfig {
        NetworkConfig {
            input_dim,
            hidden_layers: self.hidden_layers,
            width: self.width,
            classes,
            eta: self.eta,
            lambda,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            weight_floor: self.weight_floor,
            normalize_weights: self.normalize_weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub stream: StreamSpec,
    pub learner: LearnerSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub network: NetSettings,
    #[serde(default)]
    pub bilevel: BilevelConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default = "default_memory")]
    pub memory_capacity: usize,
    #[serde(default)]
    pub baseline: BaselineParams,
}

fn default_memory() -> usize {
    256
}

impl RunConfig {
    pub fn new(stream: StreamSpec, learner: LearnerSpec, seed: u64) -> Self {
        Self {
            stream,
            learner,
            seed,
            network: NetSettings::default(),
            bilevel: BilevelConfig::default(),
            detector: DetectorConfig::default(),
            memory_capacity: default_memory(),
            baseline: BaselineParams::default(),
        }
    }

    /// λ actually used by the learner: zero for the base variant.
    pub fn effective_lambda(&self) -> f64 {
        match self.learner {
            LearnerSpec::Bodl(v) if v.uses_similarity() => self.network.lambda,
            _ => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.learner {
            LearnerSpec::Bodl(v) => {
                if v.uses_similarity() && self.network.lambda <= 0.0 {
                    return config(format!("{} needs lambda > 0", self.learner));
                }
                self.network.network_config(1, 2, self.effective_lambda()).validate()?;
                self.bilevel.validate()?;
                if self.detector.min_instances < 1 || self.detector.k.is_nan() || self.detector.k <= 0.0 {
                    return config("detector needs min_instances >= 1 and k > 0");
                }
            }
            LearnerSpec::Baseline(_) => self.baseline.validate()?,
        }
        Ok(())
    }
}

/// Per-class confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassCounts {
    fn ratio(num: u64, den: u64) -> f64 {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    }

    pub fn precision(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Running prequential counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total: u64,
    pub correct: u64,
    pub per_class: Vec<ClassCounts>,
}

impl Metrics {
    pub fn new(classes: usize) -> Self {
        Self { total: 0, correct: 0, per_class: vec![ClassCounts::default(); classes] }
    }

    pub fn update(&mut self, predicted: usize, actual: usize) {
        self.total += 1;
        if predicted == actual {
            self.correct += 1;
            self.per_class[actual].tp += 1;
        } else {
            self.per_class[predicted].fp += 1;
            self.per_class[actual].fn_ += 1;
        }
    }

    pub fn accuracy(&self) -> f64 {
        ClassCounts::ratio(self.correct, self.total)
    }

    fn macro_avg(&self, f: impl Fn(&ClassCounts) -> f64) -> f64 {
        if self.per_class.is_empty() {
            return 0.0;
        }
        self.per_class.iter().map(f).sum::<f64>() / self.per_class.len() as f64
    }

    pub fn macro_precision(&self) -> f64 {
        self.macro_avg(ClassCounts::precision)
    }

    pub fn macro_recall(&self) -> f64 {
        self.macro_avg(ClassCounts::recall)
    }

    pub fn macro_f1(&self) -> f64 {
        self.macro_avg(ClassCounts::f1)
    }

    pub fn summary(&self) -> Summary {
        Summary {
            accuracy: self.accuracy(),
            precision: self.macro_precision(),
            recall: self.macro_recall(),
            f1: self.macro_f1(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub position: u64,
    pub error_rate: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: RunConfig,
    pub stream: String,
    pub input_dim: usize,
    pub classes: usize,
    pub summary: Summary,
    pub metrics: Metrics,
    pub drift_events: Vec<DriftEvent>,
    pub adaptations: Vec<AdaptLog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

impl MetricsReport {
    pub fn accuracy(&self) -> f64 {
        self.summary.accuracy
    }

    /// The report without timing, for byte-stable output.
    pub fn without_timing(mut self) -> Self {
        self.wall_time_secs = None;
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

const MEMORY_STREAM: u64 = 0x6d65_6d6f_7279;

/// Runs the stream described by `cfg` through its learner, test-then-train.
pub fn prequential_run(cfg: &RunConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let source = cfg.stream.open(cfg.seed)?;
    run_on_source(cfg, source)
}

/// As [`prequential_run`] on an already-materialized stream.
pub fn run_on_source(cfg: &RunConfig, source: StreamSource) -> Result<MetricsReport> {
    cfg.validate()?;
    let start = Instant::now();
    let (d, classes) = (source.input_dim, source.classes);
    let stream = source.provenance.clone();
    let mut metrics = Metrics::new(classes);
    let mut drift_events = Vec::new();
    let mut adaptations = Vec::new();

    if !source.is_empty() {
        match cfg.learner {
            LearnerSpec::Baseline(kind) => {
                let mut model = LinearModel::new(kind, d, classes, cfg.baseline)?;
                let mut scaler = Standardizer::new(d);
                for inst in source {
                    let x = scaler.standardize(&inst.features);
                    let pred = model.step(&x, inst.label)?;
                    metrics.update(pred, inst.label);
                }
            }
            LearnerSpec::Bodl(variant) => {
                let mut run = BodlRun::new(cfg, variant, d, classes)?;
                for inst in source {
                    let pred = run.step(inst)?;
                    metrics.update(pred.predicted, pred.actual);
                }
                drift_events = run.drift_events;
                adaptations = run.adaptations;
            }
        }
    }

    Ok(MetricsReport {
        config: cfg.clone(),
        stream,
        input_dim: d,
        classes,
        summary: metrics.summary(),
        metrics,
        drift_events,
        adaptations,
        wall_time_secs: Some(start.elapsed().as_secs_f64()),
    })
}

struct Scored {
    predicted: usize,
    actual: usize,
}

/// Live state of one hedged-network run.
struct BodlRun {
    variant: BodlVariant,
    lambda: f64,
    bilevel: BilevelConfig,
    net: HedgeNet,
    scaler: Standardizer,
    detector: DriftDetector,
    memory: EpisodicMemory,
    recent: RecentBuffer,
    rng: ChaCha8Rng,
    drift_events: Vec<DriftEvent>,
    adaptations: Vec<AdaptLog>,
}

impl BodlRun {
    fn new(cfg: &RunConfig, variant: BodlVariant, d: usize, classes: usize) -> Result<Self> {
        let lambda = cfg.effective_lambda();
        let net = HedgeNet::new(cfg.network.network_config(d, classes, lambda), cfg.seed)?;
        Ok(Self {
            variant,
            lambda,
            bilevel: cfg.bilevel,
            net,
            scaler: Standardizer::new(d),
            detector: DriftDetector::new(cfg.detector),
            memory: EpisodicMemory::new(cfg.memory_capacity),
            recent: RecentBuffer::new(cfg.bilevel.recent_size),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ MEMORY_STREAM),
            drift_events: Vec::new(),
            adaptations: Vec::new(),
        })
    }

    fn step(&mut self, inst: StreamInstance) -> Result<Scored> {
        let x = self.scaler.standardize(&inst.features);
        let y = inst.label;
        let acts = self.net.forward(&x)?;
        let predicted = argmax(&self.net.predict_proba(&acts));

        self.net.hedge(&acts, y)?;
        let scaled = StreamInstance::new(x, y, inst.position);
        self.recent.push(scaled.clone());

        match self.detector.observe(predicted != y) {
            DriftStatus::Drift => {
                self.drift_events.push(DriftEvent {
                    position: inst.position,
                    error_rate: self.detector.error_rate(),
                    threshold: self.detector.threshold(),
                });
                if self.variant.uses_bilevel() {
                    let (params, log) = adapt_on_drift(
                        &self.net.params,
                        &self.recent,
                        &self.memory,
                        &self.net.weights,
                        self.lambda,
                        &self.bilevel,
                        &mut self.rng,
                    )?;
                    self.net.params = params;
                    self.adaptations.push(log);
                } else {
                    self.net.train_step(&acts, y)?;
                }
                self.detector.reset();
            }
            DriftStatus::Stable => self.net.train_step(&acts, y)?,
        }

        self.memory.maybe_insert(scaled, &mut self.rng);
        Ok(Scored { predicted, actual: y })
    }
}

/// Runs every config independently on `workers` threads. Output order
/// follows input order; a failing run does not stop the others.
pub fn run_suite(configs: &[RunConfig], workers: usize) -> Vec<Result<MetricsReport>> {
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            return configs.iter().map(|_| Err(Error::Config(format!("thread pool: {e}")))).collect();
        }
    };
    pool.install(|| configs.par_iter().map(prequential_run).collect())
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Table-style CSV: one block per metric, methods as rows, streams as
/// columns, each cell the mean over seeds.
pub fn summary_table(reports: &[MetricsReport]) -> String {
    let mut streams: Vec<String> = Vec::new();
    let mut methods: Vec<String> = Vec::new();
    for r in reports {
        let s = r.config.stream.to_string();
        if !streams.contains(&s) {
            streams.push(s);
        }
        let m = r.config.learner.to_string();
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    let mut out = String::from("metric,method");
    for s in &streams {
        out.push(',');
        out.push_str(&csv_field(s));
    }
    out.push('\n');
    type Getter = fn(&Summary) -> f64;
    let metrics: [(&str, Getter); 4] = [
        ("accuracy", |s| s.accuracy),
        ("precision", |s| s.precision),
        ("recall", |s| s.recall),
        ("f1", |s| s.f1),
    ];
    for (name, get) in metrics {
        for m in &methods {
            out.push_str(name);
            out.push(',');
            out.push_str(m);
            for s in &streams {
                let vals: Vec<f64> = reports
                    .iter()
                    .filter(|r| &r.config.learner.to_string() == m && &r.config.stream.to_string() == s)
                    .map(|r| get(&r.summary))
                    .collect();
                out.push(',');
                if !vals.is_empty() {
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    out.push_str(&format!("{:.4}", 100.0 * mean));
                }
            }
            out.push('\n');
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', ';']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
