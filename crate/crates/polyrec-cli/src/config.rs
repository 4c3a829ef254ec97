//! Run configuration: TOML file merged with command-line overrides.
//!
//! Precedence is flags > config file > defaults. One base seed drives every
//! stage through fixed offsets so a whole pipeline re-runs identically:
//! split uses seed+1, model init seed+2, batch shuffling and dropout seed+3,
//! synthesis seed+4.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use polyrec::fusion::{Architecture, Modality, TrainConfig};
use polyrec::ranking::PropertySelection;

pub const DEFAULT_K_RETRIEVE: usize = 100;
pub const DEFAULT_K_FINAL: usize = 50;
pub const SPLIT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workdir: Option<PathBuf>,
    pub arch: Option<String>,
    pub modality: Option<String>,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub retrieval: RetrievalSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub manifest: Option<PathBuf>,
    pub lang_embeddings: Option<PathBuf>,
    pub graph_embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub epochs: Option<usize>,
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalSection {
    pub k_retrieve: Option<usize>,
    pub k_final: Option<usize>,
    pub properties: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config `{}`", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config `{}`", path.display()))
    }
}

/// Fully resolved configuration for one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub workdir: PathBuf,
    pub arch: Architecture,
    pub modality: Modality,
    pub manifest: Option<PathBuf>,
    pub lang_embeddings: Option<PathBuf>,
    pub graph_embeddings: Option<PathBuf>,
    pub train: TrainConfig,
    pub k_retrieve: usize,
    pub k_final: usize,
    pub properties: PropertySelection,
}

impl RunConfig {
    /// Merge defaults, a config file (if any) and CLI overrides.
    #[allow(clippy::too_many_arguments)]
    pub fn resolve(
        file: FileConfig,
        seed: Option<u64>,
        workdir: Option<PathBuf>,
        arch: Option<String>,
        modality: Option<String>,
        train_over: TrainSection,
        k_retrieve: Option<usize>,
        k_final: Option<usize>,
        properties: Option<String>,
    ) -> Result<Self> {
        let seed = seed.or(file.seed).unwrap_or(42);
        let workdir = workdir.or(file.workdir).unwrap_or_else(|| PathBuf::from("work"));
        let arch_name = arch.or(file.arch).unwrap_or_else(|| "mmoe".into());
        let arch = Architecture::parse(&arch_name)
            .with_context(|| format!("unknown architecture `{arch_name}` (early|gated|mmoe)"))?;
        let modality_name = modality.or(file.modality).unwrap_or_else(|| "both".into());
        let modality = Modality::parse(&modality_name)
            .with_context(|| format!("unknown modality `{modality_name}` (lang|graph|both)"))?;

        let defaults = TrainConfig::default();
        let train = TrainConfig {
            batch_size: train_over.batch_size.or(file.train.batch_size).unwrap_or(defaults.batch_size),
            lr: train_over.lr.or(file.train.lr).unwrap_or(defaults.lr),
            weight_decay: train_over
                .weight_decay
                .or(file.train.weight_decay)
                .unwrap_or(defaults.weight_decay),
            epochs: train_over.epochs.or(file.train.epochs).unwrap_or(defaults.epochs),
            dropout: train_over.dropout.or(file.train.dropout).unwrap_or(defaults.dropout),
            seed: seed.wrapping_add(3),
            ..defaults
        };

        let k_retrieve =
            k_retrieve.or(file.retrieval.k_retrieve).unwrap_or(DEFAULT_K_RETRIEVE);
        let k_final = k_final.or(file.retrieval.k_final).unwrap_or(DEFAULT_K_FINAL);
        if k_retrieve == 0 {
            bail!("k_retrieve must be at least 1");
        }
        let properties = match properties.or(file.retrieval.properties) {
            Some(list) => PropertySelection::parse(&list)
                .with_context(|| format!("bad property list `{list}` (subset of tg,tm,eg)"))?,
            None => PropertySelection::default(),
        };

        Ok(Self {
            seed,
            workdir,
            arch,
            modality,
            manifest: file.paths.manifest,
            lang_embeddings: file.paths.lang_embeddings,
            graph_embeddings: file.paths.graph_embeddings,
            train,
            k_retrieve,
            k_final,
            properties,
        })
    }

    pub fn split_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn init_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    pub fn synth_seed(&self) -> u64 {
        self.seed.wrapping_add(4)
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.workdir.join("dataset")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.workdir.join("models")
    }

    pub fn exports_dir(&self) -> PathBuf {
        self.workdir.join("exports")
    }

    pub fn synth_dir(&self) -> PathBuf {
        self.workdir.join("synth")
    }
}
