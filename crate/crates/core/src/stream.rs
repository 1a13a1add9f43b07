//! Stream sources: CSV ingestion, synthetic drifting generators, and the
//! online standardizer applied ahead of every learner.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::memory::StreamInstance;

/// A fully materialized, ordered stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSource {
    pub input_dim: usize,
    pub classes: usize,
    pub instances: Vec<StreamInstance>,
    pub provenance: String,
    /// Original label strings, indexed by encoded class.
    pub label_names: Vec<String>,
}

impl StreamSource {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Seeded permutation of the instances; positions are renumbered in the new order.
    /// Only meaningful for stationary data.
    pub fn shuffled(mut self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.instances.shuffle(&mut rng);
        for (i, inst) in self.instances.iter_mut().enumerate() {
            inst.position = i as u64;
        }
        self.provenance = format!("{} (shuffled, seed {seed})", self.provenance);
        self
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for inst in &self.instances {
            let mut rec: Vec<String> = inst.features.iter().map(|v| v.to_string()).collect();
            rec.push(inst.label.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl IntoIterator for StreamSource {
    type Item = StreamInstance;
    type IntoIter = std::vec::IntoIter<StreamInstance>;

    fn into_iter(self) -> Self::IntoIter {
        self.instances.into_iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelColumn {
    Last,
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label: LabelColumn,
    pub delimiter: u8,
    pub has_header: bool,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self { label: LabelColumn::Last, delimiter: b',', has_header: false }
    }
}

/// Reads a delimited file in order. Every non-label column must be numeric;
/// labels are encoded densely by first appearance.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<StreamSource> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;

    let header_names: Option<Vec<String>> = if schema.has_header {
        Some(reader.headers()?.iter().map(str::to_owned).collect())
    } else {
        None
    };

    let mut label_idx: Option<usize> = match (&schema.label, &header_names) {
        (LabelColumn::Index(i), _) => Some(*i),
        (LabelColumn::Name(name), Some(h)) => Some(h.iter().position(|c| c == name).ok_or_else(|| {
            Error::Ingest { row: 1, msg: format!("label column `{name}` not found in header") }
        })?),
        (LabelColumn::Name(name), None) => {
            return Err(Error::Ingest { row: 0, msg: format!("label column `{name}` given by name but file has no header") })
        }
        (LabelColumn::Last, Some(h)) => Some(h.len().saturating_sub(1)),
        (LabelColumn::Last, None) => None,
    };

    let mut width: Option<usize> = header_names.as_ref().map(Vec::len);
    let mut codes: HashMap<String, usize> = HashMap::new();
    let mut label_names = Vec::new();
    let mut instances = Vec::new();

    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::Ingest { row, msg: format!("expected {w} fields, found {}", rec.len()) });
        }
        let li = *label_idx.get_or_insert(w - 1);
        if li >= w {
            return Err(Error::Ingest { row, msg: format!("label column {li} out of range for {w} fields") });
        }
        let mut features = Vec::with_capacity(w - 1);
        for (j, field) in rec.iter().enumerate() {
            if j == li {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Ingest {
                row,
                msg: format!("non-numeric value `{field}` in column {j}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Ingest { row, msg: format!("non-finite value in column {j}") });
            }
            features.push(v);
        }
        let raw = rec.get(li).unwrap().to_owned();
        let next = codes.len();
        let label = *codes.entry(raw.clone()).or_insert_with(|| {
            label_names.push(raw);
            next
        });
        instances.push(StreamInstance::new(features, label, instances.len() as u64));
    }

    let input_dim = width.map_or(0, |w| w - 1);
    Ok(StreamSource {
        input_dim,
        classes: label_names.len().max(2),
        instances,
        provenance: path.display().to_string(),
        label_names,
    })
}

/// Running per-feature mean/variance (Welford). The transform for an
/// instance uses only statistics of earlier instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

pub const STD_GUARD: f64 = 1e-8;

impl Standardizer {
    pub fn new(dim: usize) -> Self {
        Self { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Population variance of the instances folded in so far.
    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.mean.len()];
        }
        self.m2.iter().map(|m| m / self.count as f64).collect()
    }

    /// Scales `x` with the current statistics, then folds it in. The first
    /// instance maps to the zero vector, and so does any feature whose spread
    /// is still within [`STD_GUARD`] (a feature that has only ever taken one
    /// value would otherwise be divided by the guard itself).
    pub fn standardize(&mut self, x: &[f64]) -> Vec<f64> {
        let n = self.count as f64;
        let out = x
            .iter()
            .zip(&self.mean)
            .zip(&self.m2)
            .map(|((&v, &m), &m2)| {
                let sd = if self.count == 0 { 0.0 } else { (m2 / n).sqrt() };
                if sd <= STD_GUARD {
                    0.0
                } else {
                    (v - m) / sd
                }
            })
            .collect();
        self.count += 1;
        let n = self.count as f64;
        for ((v, m), m2) in x.iter().zip(self.mean.iter_mut()).zip(self.m2.iter_mut()) {
            let delta = v - *m;
            *m += delta / n;
            *m2 += delta * (v - *m);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Sea,
    Hyperplane,
}

/// How the hyperplane changes between segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HyperplaneDrift {
    /// Independent random hyperplane per segment.
    Redraw,
    /// Each segment negates the previous hyperplane.
    Flip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub segments: Vec<usize>,
    pub noise: f64,
    pub dim: usize,
    pub seed: u64,
    pub drift: HyperplaneDrift,
}

/// Thresholds cycled through by SEA segments.
pub const SEA_THRESHOLDS: [f64; 4] = [8.0, 9.0, 7.0, 9.5];

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, segments: Vec<usize>) -> Self {
        let dim = match kind {
            GeneratorKind::Sea => 3,
            GeneratorKind::Hyperplane => 10,
        };
        Self { kind, segments, noise: 0.0, dim, seed: 0, drift: HyperplaneDrift::Redraw }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() || self.segments.iter().all(|&s| s == 0) {
            return config("generator needs at least one non-empty segment");
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return config(format!("noise rate must lie in [0, 1], got {}", self.noise));
        }
        match self.kind {
            GeneratorKind::Sea if self.dim < 2 => config("SEA needs at least 2 features"),
            GeneratorKind::Hyperplane if self.dim < 1 => config("hyperplane needs at least 1 feature"),
            _ => Ok(()),
        }
    }

    /// The labeling hyperplanes, one per segment (hyperplane streams only).
    pub fn hyperplanes(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut planes: Vec<Vec<f64>> = Vec::with_capacity(self.segments.len());
        for _ in 0..self.segments.len() {
            let w = match (self.drift, planes.last()) {
                (HyperplaneDrift::Flip, Some(prev)) => prev.iter().map(|v| -v).collect(),
                _ => (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            };
            planes.push(w);
        }
        planes
    }
}

/// Synthetic drifting stream, fully determined by `spec`.
pub fn gen_drift_stream(spec: &GeneratorSpec) -> Result<StreamSource> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let planes = spec.hyperplanes();
    let mut instances = Vec::with_capacity(spec.segments.iter().sum());
    for (k, &len) in spec.segments.iter().enumerate() {
        for _ in 0..len {
            let (x, y) = match spec.kind {
                GeneratorKind::Sea => {
                    let x: Vec<f64> = (0..spec.dim).map(|_| rng.gen_range(0.0..10.0)).collect();
                    let theta = SEA_THRESHOLDS[k % SEA_THRESHOLDS.len()];
                    let y = usize::from(x[0] + x[1] <= theta);
                    (x, y)
                }
                GeneratorKind::Hyperplane => {
                    let x: Vec<f64> = (0..spec.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let y = usize::from(crate::numerics::dot(&planes[k], &x) > 0.0);
                    (x, y)
                }
            };
            let flip = spec.noise > 0.0 && rng.gen_bool(spec.noise);
            let y = if flip { 1 - y } else { y };
            instances.push(StreamInstance::new(x, y, instances.len() as u64));
        }
    }
    Ok(StreamSource {
        input_dim: spec.dim,
        classes: 2,
        instances,
        provenance: StreamSpec::Synthetic(spec.clone()).to_string(),
        label_names: vec!["0".into(), "1".into()],
    })
}

/// Named datasets and where to find them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NamedDataset {
    pub name: &'static str,
    pub file: &'static str,
}

pub const NAMED_DATASETS: [NamedDataset; 2] = [
    NamedDataset { name: "pima", file: "pima.csv" },
    NamedDataset { name: "magic", file: "magic04.csv" },
];

/// Directory holding the named datasets: `$BODL_DATA_DIR`, `./data`, or the
/// workspace `data/` directory.
pub fn data_dir() -> PathBuf {
    if let Ok(dir) = std::env::var("BODL_DATA_DIR") {
        return PathBuf::from(dir);
    }
    let local = PathBuf::from("data");
    if local.is_dir() {
        return local;
    }
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// What `--stream` points at.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamSpec {
    Csv { path: PathBuf, schema: CsvSchema, shuffle: bool },
    /// A dataset from [`data_dir`]; `shuffle` replays it in a seeded order.
    Named { dataset: NamedDataset, shuffle: bool },
    Synthetic(GeneratorSpec),
}

impl StreamSpec {
    /// Materializes the stream. `seed` orders stationary sets that are shuffled.
    pub fn open(&self, seed: u64) -> Result<StreamSource> {
        match self {
            StreamSpec::Csv { path, schema, shuffle } => {
                let s = load_csv(path, schema)?;
                Ok(if *shuffle { s.shuffled(seed) } else { s })
            }
            StreamSpec::Named { dataset: ds, shuffle } => {
                let path = data_dir().join(ds.file);
                if !path.is_file() {
                    return Err(Error::Config(format!(
                        "dataset `{}` not found at {} (run scripts/fetch_datasets.py or set BODL_DATA_DIR)",
                        ds.name,
                        path.display()
                    )));
                }
                let mut s = load_csv(&path, &CsvSchema::default())?;
                s.provenance = format!("{} ({})", ds.name, path.display());
                Ok(if *shuffle { s.shuffled(seed) } else { s })
            }
            StreamSpec::Synthetic(g) => gen_drift_stream(g),
        }
    }
}

fn parse_kv(body: &str) -> Result<Vec<(String, String)>> {
    body.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{p}`")))?;
            Ok((k.trim().to_ascii_lowercase(), v.trim().to_owned()))
        })
        .collect()
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        _ => config(format!("bad boolean `{v}` for `{key}`")),
    }
}

impl FromStr for GeneratorSpec {
    type Err = Error;

    /// `sea:seg=2000,2000;noise=0.1;seed=7` or
    /// `hyperplane:seg=2000,2000;noise=0.1;d=10;drift=flip;seed=1`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, body) = s.split_once(':').unwrap_or((s, ""));
        let kind = match kind.to_ascii_lowercase().as_str() {
            "sea" => GeneratorKind::Sea,
            "hyperplane" => GeneratorKind::Hyperplane,
            other => return config(format!("unknown generator `{other}`")),
        };
        let mut spec = GeneratorSpec::new(kind, vec![1000, 1000]);
        for (k, v) in parse_kv(body)? {
            match k.as_str() {
                "seg" | "segments" => {
                    spec.segments = v.split(',').map(|x| parse_num("seg", x.trim())).collect::<Result<_>>()?
                }
                "noise" => spec.noise = parse_num(&k, &v)?,
                "seed" => spec.seed = parse_num(&k, &v)?,
                "d" | "dim" => spec.dim = parse_num(&k, &v)?,
                "drift" => {
                    spec.drift = match v.as_str() {
                        "flip" => HyperplaneDrift::Flip,
                        "redraw" => HyperplaneDrift::Redraw,
                        _ => return config(format!("unknown drift mode `{v}`")),
                    }
                }
                _ => return config(format!("unknown generator option `{k}`")),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            GeneratorKind::Sea => "sea",
            GeneratorKind::Hyperplane => "hyperplane",
        };
        let segs: Vec<String> = self.segments.iter().map(usize::to_string).collect();
        write!(f, "{kind}:seg={};noise={};d={};seed={}", segs.join(","), self.noise, self.dim, self.seed)?;
        if self.kind == GeneratorKind::Hyperplane {
            let drift = match self.drift {
                HyperplaneDrift::Flip => "flip",
                HyperplaneDrift::Redraw => "redraw",
            };
            write!(f, ";drift={drift}")?;
        }
        Ok(())
    }
}

impl FromStr for StreamSpec {
    type Err = Error;

    /// `csv:<name-or-path>[;label=..;delim=..;header=..;shuffle=..]`,
    /// `sea:...` or `hyperplane:...`.
    fn from_str(s: &str) -> Result<Self> {
        let (scheme, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("stream `{s}` needs a scheme (csv:, sea:, hyperplane:)")))?;
        match scheme.to_ascii_lowercase().as_str() {
            "csv" => {
                let (target, opts) = rest.split_once(';').unwrap_or((rest, ""));
                let opts = parse_kv(opts)?;
                if let Some(ds) = NAMED_DATASETS.iter().find(|d| d.name == target.to_ascii_lowercase()) {
                    let mut shuffle = false;
                    for (k, v) in opts {
                        match k.as_str() {
                            "shuffle" => shuffle = parse_bool(&k, &v)?,
                            _ => return config(format!("named dataset `{}` only takes `shuffle`", ds.name)),
                        }
                    }
                    return Ok(StreamSpec::Named { dataset: *ds, shuffle });
                }
                let mut schema = CsvSchema::default();
                let mut shuffle = false;
                for (k, v) in opts {
                    match k.as_str() {
                        "label" => {
                            schema.label = match v.parse::<usize>() {
                                Ok(i) => LabelColumn::Index(i),
                                Err(_) if v == "last" => LabelColumn::Last,
                                Err(_) => LabelColumn::Name(v),
                            }
                        }
                        "delim" | "delimiter" => {
                            schema.delimiter = match v.as_str() {
                                "tab" | "\\t" => b'\t',
                                d if d.len() == 1 => d.as_bytes()[0],
                                _ => return config(format!("delimiter must be one byte, got `{v}`")),
                            }
                        }
                        "header" => schema.has_header = parse_bool(&k, &v)?,
                        "shuffle" => shuffle = parse_bool(&k, &v)?,
                        _ => return config(format!("unknown csv option `{k}`")),
                    }
                }
                Ok(StreamSpec::Csv { path: PathBuf::from(target), schema, shuffle })
            }
            "sea" | "hyperplane" => Ok(StreamSpec::Synthetic(s.parse()?)),
            other => config(format!("unknown stream scheme `{other}`")),
        }
    }
}

impl fmt::Display for StreamSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StreamSpec::Named { dataset, shuffle } => {
                write!(f, "csv:{}", dataset.name)?;
                if *shuffle {
                    write!(f, ";shuffle=true")?;
                }
                Ok(())
            }
            StreamSpec::Synthetic(g) => g.fmt(f),
            StreamSpec::Csv { path, schema, shuffle } => {
                write!(f, "csv:{}", path.display())?;
                match &schema.label {
                    LabelColumn::Last => {}
                    LabelColumn::Index(i) => write!(f, ";label={i}")?,
                    LabelColumn::Name(n) => write!(f, ";label={n}")?,
                }
                if schema.delimiter != b',' {
                    write!(f, ";delim={}", schema.delimiter as char)?;
                }
                if schema.has_header {
                    write!(f, ";header=true")?;
                }
                if *shuffle {
                    write!(f, ";shuffle=true")?;
                }
                Ok(())
            }
        }
    }
}

impl Serialize for StreamSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StreamSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
