//! Dataset ingestion and preparation: manifest + embedding loading, split
//! assignment, label standardization, and synthetic corpus generation.
//!
//! Records carry two precomputed embeddings (a 600-d language vector and a
//! 512-d molecular-graph vector) and up to three property labels: glass
//! transition temperature Tg (K), melting temperature Tm (K), and band gap
//! Eg (eV). Labels are sparse; everything downstream masks on availability.

pub mod embeddings;
pub mod manifest;
pub mod synthetic;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embeddings::{attach_embeddings, read_embeddings, write_embeddings_binary, write_embeddings_csv};
pub use manifest::{load_manifest, write_manifest};
pub use synthetic::{generate_synthetic, noise_std_for_r2, GroundTruth, SyntheticSpec};

pub const LANG_DIM: usize = 600;
pub const GRAPH_DIM: usize = 512;
pub const FUSED_DIM: usize = LANG_DIM + GRAPH_DIM;
pub const NUM_TASKS: usize = 3;

/// Guard below which a per-task standard deviation counts as degenerate.
pub const STD_FLOOR: f64 = 1e-8;

/// The three regression targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Property {
    Tg,
    Tm,
    Eg,
}

impl Property {
    pub const ALL: [Property; NUM_TASKS] = [Property::Tg, Property::Tm, Property::Eg];

    pub fn index(self) -> usize {
        match self {
            Property::Tg => 0,
            Property::Tm => 1,
            Property::Eg => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Property::Tg => "tg",
            Property::Tm => "tm",
            Property::Eg => "eg",
        }
    }

    pub fn parse(s: &str) -> Option<Property> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tg" => Some(Property::Tg),
            "tm" => Some(Property::Tm),
            "eg" => Some(Property::Eg),
            _ => None,
        }
    }
}

/// Per-task label availability flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelMask(pub [bool; NUM_TASKS]);

/// One polymer: opaque SMILES text, optional embeddings, sparse labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PolymerRecord {
    pub id: String,
    pub smiles: String,
    pub lang_emb: Option<Vec<f64>>,
    pub graph_emb: Option<Vec<f64>>,
    pub labels: [Option<f64>; NUM_TASKS],
}

impl PolymerRecord {
    pub fn mask(&self) -> LabelMask {
        LabelMask([self.labels[0].is_some(), self.labels[1].is_some(), self.labels[2].is_some()])
    }
}

/// Immutable record collection with an id lookup table.
#[derive(Debug, Clone)]
pub struct Dataset {
    records: Vec<PolymerRecord>,
    by_id: HashMap<String, usize>,
}

impl Dataset {
    /// Build from records, rejecting duplicate ids and non-finite values.
    pub fn new(records: Vec<PolymerRecord>) -> Result<Self, DatasetError> {
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            if by_id.insert(rec.id.clone(), i).is_some() {
                return Err(DatasetError::DuplicateId(rec.id.clone()));
            }
            for (k, label) in rec.labels.iter().enumerate() {
                if let Some(v) = label {
                    if !v.is_finite() {
                        return Err(DatasetError::NonFiniteLabel {
                            id: rec.id.clone(),
                            task: Property::ALL[k].name(),
                        });
                    }
                }
            }
        }
        Ok(Self { records, by_id })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PolymerRecord] {
        &self.records
    }

    pub fn record(&self, idx: usize) -> &PolymerRecord {
        &self.records[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn by_id(&self, id: &str) -> Option<&PolymerRecord> {
        self.index_of(id).map(|i| &self.records[i])
    }

    /// Number of present labels per task.
    pub fn label_counts(&self) -> [usize; NUM_TASKS] {
        let mut counts = [0usize; NUM_TASKS];
        for rec in &self.records {
            for (k, label) in rec.labels.iter().enumerate() {
                if label.is_some() {
                    counts[k] += 1;
                }
            }
        }
        counts
    }

    pub fn embeddings_attached(&self) -> bool {
        self.records.iter().all(|r| r.lang_emb.is_some() && r.graph_emb.is_some())
    }

    pub(crate) fn records_mut(&mut self) -> &mut [PolymerRecord] {
        &mut self.records
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Which split each record landed in, parallel to `Dataset::records`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    splits: Vec<Split>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn split_of(&self, idx: usize) -> Split {
        self.splits[idx]
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for s in &self.splits {
            match s {
                Split::Train => c.0 += 1,
                Split::Val => c.1 += 1,
                Split::Test => c.2 += 1,
            }
        }
        c
    }

    pub fn from_splits(splits: Vec<Split>, seed: u64) -> Self {
        Self { splits, seed }
    }

    /// CSV export `id,split`, one row per record in dataset order.
    pub fn write_csv(
        &self,
        path: impl AsRef<std::path::Path>,
        dataset: &Dataset,
    ) -> Result<(), DatasetError> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
        writeln!(w, "id,split")?;
        for (rec, split) in dataset.records().iter().zip(&self.splits) {
            writeln!(w, "{},{}", rec.id, split.name())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Load a split CSV written by [`SplitAssignment::write_csv`]; every
    /// dataset id must be covered.
    pub fn read_csv(
        path: impl AsRef<std::path::Path>,
        dataset: &Dataset,
        seed: u64,
    ) -> Result<Self, DatasetError> {
        use std::io::BufRead;
        let reader = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
        let mut by_id: HashMap<String, Split> = HashMap::with_capacity(dataset.len());
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let (id, split_name) = line.split_once(',').ok_or_else(|| DatasetError::Malformed {
                line: lineno + 1,
                message: "expected `id,split`".into(),
            })?;
            let split = Split::parse(split_name).ok_or_else(|| DatasetError::Malformed {
                line: lineno + 1,
                message: format!("unknown split `{split_name}`"),
            })?;
            by_id.insert(id.to_string(), split);
        }
        let splits = dataset
            .records()
            .iter()
            .map(|rec| {
                by_id.get(&rec.id).copied().ok_or_else(|| DatasetError::Malformed {
                    line: 0,
                    message: format!("split file does not cover id `{}`", rec.id),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { splits, seed })
    }
}

/// Present-label counts per task restricted to one split.
pub fn label_counts_in_split(
    dataset: &Dataset,
    assignment: &SplitAssignment,
    split: Split,
) -> [usize; NUM_TASKS] {
    let mut counts = [0usize; NUM_TASKS];
    for (rec, s) in dataset.records().iter().zip(assignment.splits()) {
        if *s == split {
            for (k, label) in rec.labels.iter().enumerate() {
                if label.is_some() {
                    counts[k] += 1;
                }
            }
        }
    }
    counts
}

/// Randomly partition records into train/val/test.
///
/// Counts follow the floor rule: `n_train = floor(r_train * N)`,
/// `n_val = floor(r_val * N)`, remainder to test. The permutation is drawn
/// from a ChaCha stream seeded by `seed`, so assignments are reproducible.
pub fn split_dataset(
    dataset: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment, DatasetError> {
    let (rt, rv, rs) = ratios;
    if rt <= 0.0 || rv <= 0.0 || rs <= 0.0 || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadRatios(format!("{rt}:{rv}:{rs}")));
    }
    let n = dataset.len();
    if n < 3 {
        return Err(DatasetError::TooFewRecords(n));
    }
    let n_train = (rt * n as f64).floor() as usize;
    let n_val = (rv * n as f64).floor() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut splits = vec![Split::Test; n];
    for &i in &order[..n_train] {
        splits[i] = Split::Train;
    }
    for &i in &order[n_train..n_train + n_val] {
        splits[i] = Split::Val;
    }
    Ok(SplitAssignment { splits, seed })
}

/// Per-task mean and population standard deviation of the training labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStats {
    pub mean: [f64; NUM_TASKS],
    pub std: [f64; NUM_TASKS],
}

impl TaskStats {
    pub fn save_json(&self, path: impl AsRef<std::path::Path>) -> Result<(), DatasetError> {
        let data = serde_json::to_vec_pretty(self)
            .map_err(|e| DatasetError::Malformed { line: 0, message: e.to_string() })?;
        std::fs::write(path.as_ref(), data)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<std::path::Path>) -> Result<Self, DatasetError> {
        let data = std::fs::read(path.as_ref())?;
        serde_json::from_slice(&data)
            .map_err(|e| DatasetError::Malformed { line: 0, message: e.to_string() })
    }
}

/// Compute label statistics from the training split only.
pub fn compute_task_stats(
    dataset: &Dataset,
    assignment: &SplitAssignment,
) -> Result<TaskStats, DatasetError> {
    let mut mean = [0.0; NUM_TASKS];
    let mut std = [0.0; NUM_TASKS];
    for (k, prop) in Property::ALL.iter().enumerate() {
        let values: Vec<f64> = dataset
            .records()
            .iter()
            .zip(assignment.splits())
            .filter(|(_, s)| **s == Split::Train)
            .filter_map(|(r, _)| r.labels[k])
            .collect();
        if values.len() < 2 {
            return Err(DatasetError::TooFewLabels { task: prop.name(), count: values.len() });
        }
        let n = values.len() as f64;
        let m = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        let s = var.sqrt();
        if s <= STD_FLOOR {
            return Err(DatasetError::DegenerateTask { task: prop.name() });
        }
        mean[k] = m;
        std[k] = s;
    }
    Ok(TaskStats { mean, std })
}

/// `z = (y - mean) / std` at present positions; masks are untouched.
pub fn standardize(
    labels: &[Option<f64>; NUM_TASKS],
    stats: &TaskStats,
) -> [Option<f64>; NUM_TASKS] {
    let mut out = [None; NUM_TASKS];
    for k in 0..NUM_TASKS {
        out[k] = labels[k].map(|y| (y - stats.mean[k]) / stats.std[k]);
    }
    out
}

/// Inverse of [`standardize`] at present positions.
pub fn destandardize(
    values: &[Option<f64>; NUM_TASKS],
    stats: &TaskStats,
) -> [Option<f64>; NUM_TASKS] {
    let mut out = [None; NUM_TASKS];
    for k in 0..NUM_TASKS {
        out[k] = values[k].map(|z| z * stats.std[k] + stats.mean[k]);
    }
    out
}

/// Map a dense standardized prediction vector back to raw label scale.
pub fn destandardize_prediction(values: &[f64; NUM_TASKS], stats: &TaskStats) -> [f64; NUM_TASKS] {
    let mut out = [0.0; NUM_TASKS];
    for k in 0..NUM_TASKS {
        out[k] = values[k] * stats.std[k] + stats.mean[k];
    }
    out
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("record `{id}` has a non-finite {task} label")]
    NonFiniteLabel { id: String, task: &'static str },
    #[error("manifest line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("embedding file `{path}` does not contain id `{id}`")]
    MissingEmbedding { path: String, id: String },
    #[error("{modality} embedding dimension mismatch: expected {expected}, got {actual}")]
    EmbeddingDim { modality: &'static str, expected: usize, actual: usize },
    #[error("record `{id}` has a non-finite {modality} embedding entry")]
    NonFiniteEmbedding { id: String, modality: &'static str },
    #[error("split ratios {0} must be positive and sum to 1")]
    BadRatios(String),
    #[error("need at least 3 records to split, got {0}")]
    TooFewRecords(usize),
    #[error("task {task} has only {count} training labels (need at least 2)")]
    TooFewLabels { task: &'static str, count: usize },
    #[error("task {task} has (near-)zero label variance in the training split")]
    DegenerateTask { task: &'static str },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("embedding file `{path}`: {message}")]
    BadEmbeddingFile { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
