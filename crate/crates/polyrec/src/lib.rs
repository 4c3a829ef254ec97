//! Two-stage polymer recommendation over precomputed dual-modality
//! embeddings.
//!
//! The pipeline ingests polymers as opaque SMILES ids with a 600-d language
//! embedding and a 512-d molecular-graph embedding each, trains a multitask
//! property predictor (glass transition temperature, melting temperature,
//! band gap) with one of three fusion architectures, and answers queries in
//! two stages: exact top-k cosine retrieval over the language embeddings,
//! then re-ranking of the retrieved candidates by closeness of predicted
//! properties to the query's predictions.
//!
//! Modules:
//! - [`dataset`]: manifests, embedding files, splits, label standardization,
//!   synthetic corpora
//! - [`nn`]: dense MLPs with manual backprop, AdamW, plateau LR schedule,
//!   gradient checking
//! - [`fusion`]: the early / gated-late / mixture-of-experts architectures,
//!   masked multitask loss, training loop, metrics
//! - [`retrieval`]: exact top-k cosine search
//! - [`ranking`]: property-difference relevance scoring and the two-stage
//!   recommendation funnel

pub mod dataset;
pub mod fusion;
pub mod nn;
pub mod ranking;
pub mod retrieval;

pub use dataset::{Dataset, PolymerRecord, Property, Split, SplitAssignment, TaskStats};
pub use fusion::{Architecture, FusionModel, Modality, TrainConfig};
pub use ranking::{recommend, relevance, tapd, RankedCandidate};
pub use retrieval::{cosine, RetrievalHit, RetrievalIndex};
