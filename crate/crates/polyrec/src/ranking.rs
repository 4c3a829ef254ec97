//! Second funnel stage: score retrieved candidates by how closely their
//! predicted properties match the query's predictions.
//!
//! The score sums absolute relative differences over the compared
//! properties (`tapd`) and maps it onto `(0, 100]` via `relevance = 100 /
//! (tapd + 1)`, so an exact property match scores 100. Comparison always
//! uses predicted values for both sides; measured labels ride along for
//! reference but are never scored.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{
    destandardize_prediction, Dataset, Property, NUM_TASKS,
};
use crate::fusion::{record_input, FusionError, FusionModel};
use crate::retrieval::{Query, RetrievalError, RetrievalIndex};

/// Query-side predictions below this magnitude make the relative
/// difference ill-defined.
pub const QUERY_GUARD: f64 = 1e-8;

/// Subset of properties entering the score; defaults to all three.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PropertySelection(pub [bool; NUM_TASKS]);

impl Default for PropertySelection {
    fn default() -> Self {
        Self([true; NUM_TASKS])
    }
}

impl PropertySelection {
    pub fn of(props: &[Property]) -> Self {
        let mut sel = [false; NUM_TASKS];
        for p in props {
            sel[p.index()] = true;
        }
        Self(sel)
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|b| !b)
    }

    /// Parse a comma-separated list like `tg,eg`.
    pub fn parse(s: &str) -> Option<Self> {
        let mut sel = [false; NUM_TASKS];
        for part in s.split(',') {
            let p = Property::parse(part)?;
            sel[p.index()] = true;
        }
        Some(Self(sel))
    }
}

#[derive(Debug, Error)]
pub enum RankError {
    #[error("query prediction for {property} is {value:.3e}, too close to zero to compare against")]
    QueryNearZero { property: &'static str, value: f64 },
    #[error("tapd must be non-negative, got {0}")]
    NegativeTapd(f64),
    #[error("no properties selected for comparison")]
    EmptySelection,
    #[error("k_final {k_final} exceeds k_retrieve {k_retrieve}")]
    BadK { k_final: usize, k_retrieve: usize },
    #[error("candidate `{id}` produced a non-finite prediction")]
    NonFinitePrediction { id: String },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Total absolute percentage difference between candidate and query
/// predictions over the selected properties.
pub fn tapd(
    candidate: &[f64; NUM_TASKS],
    query: &[f64; NUM_TASKS],
    selection: PropertySelection,
) -> Result<f64, RankError> {
    if selection.is_empty() {
        return Err(RankError::EmptySelection);
    }
    let mut total = 0.0;
    for (k, prop) in Property::ALL.iter().enumerate() {
        if !selection.0[k] {
            continue;
        }
        if query[k].abs() <= QUERY_GUARD {
            return Err(RankError::QueryNearZero { property: prop.name(), value: query[k] });
        }
        total += ((candidate[k] - query[k]) / query[k]).abs();
    }
    Ok(total)
}

/// `R = 100 / (tapd + 1)`: strictly decreasing, 100 at an exact match.
pub fn relevance(tapd_value: f64) -> Result<f64, RankError> {
    if tapd_value < 0.0 || tapd_value.is_nan() {
        return Err(RankError::NegativeTapd(tapd_value));
    }
    Ok(100.0 / (tapd_value + 1.0))
}

/// One fully scored candidate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedCandidate {
    pub id: String,
    pub similarity: f64,
    pub predictions: [f64; NUM_TASKS],
    pub tapd: f64,
    pub relevance: f64,
}

/// A candidate dropped during scoring, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedCandidate {
    pub id: String,
    pub reason: String,
}

/// Output of [`recommend`]: the ranked list plus per-candidate drop log.
#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub query_id: String,
    pub query_predictions: [f64; NUM_TASKS],
    pub candidates: Vec<RankedCandidate>,
    pub dropped: Vec<DroppedCandidate>,
}

/// Two-stage recommendation: cosine retrieval over language embeddings,
/// then relevance ranking of the retrieved set by predicted properties.
///
/// Candidates are sorted by relevance descending, ties broken by higher
/// retrieval similarity and then ascending id, and truncated to `k_final`.
/// A candidate whose prediction comes back non-finite is dropped and
/// logged rather than scored.
pub fn recommend(
    index: &RetrievalIndex,
    model: &FusionModel,
    dataset: &Dataset,
    query_id: &str,
    k_retrieve: usize,
    k_final: usize,
    selection: PropertySelection,
) -> Result<Recommendation, RankError> {
    if k_final > k_retrieve {
        return Err(RankError::BadK { k_final, k_retrieve });
    }
    let stats = model.stats().ok_or(FusionError::NotTrained)?.clone();
    let query_rec = dataset
        .by_id(query_id)
        .ok_or_else(|| RetrievalError::UnknownId(query_id.to_string()))?;

    // stage 1: language-embedding cosine retrieval
    let hits = index.retrieve(Query::Id(query_id), k_retrieve)?;

    // stage 2: predict properties for query and candidates (eval mode)
    let query_input = record_input(query_rec, model.modality())?;
    let (query_std, _) = model.forward_one(&query_input)?;
    let query_preds = destandardize_prediction(&query_std, &stats);
    for (k, prop) in Property::ALL.iter().enumerate() {
        if selection.0[k] && query_preds[k].abs() <= QUERY_GUARD {
            return Err(RankError::QueryNearZero { property: prop.name(), value: query_preds[k] });
        }
    }

    let mut candidates = Vec::with_capacity(hits.len());
    let mut dropped = Vec::new();
    for hit in &hits {
        let rec = dataset.by_id(&hit.id).expect("retrieval hit ids come from the dataset");
        let input = record_input(rec, model.modality())?;
        let (pred_std, _) = model.forward_one(&input)?;
        let preds = destandardize_prediction(&pred_std, &stats);
        if preds.iter().any(|p| !p.is_finite()) {
            dropped.push(DroppedCandidate {
                id: hit.id.clone(),
                reason: "non-finite property prediction".into(),
            });
            continue;
        }
        match tapd(&preds, &query_preds, selection) {
            Ok(t) => {
                let r = relevance(t)?;
                candidates.push(RankedCandidate {
                    id: hit.id.clone(),
                    similarity: hit.similarity,
                    predictions: preds,
                    tapd: t,
                    relevance: r,
                });
            }
            Err(e) => dropped.push(DroppedCandidate { id: hit.id.clone(), reason: e.to_string() }),
        }
    }

    candidates.sort_by(|a, b| {
        b.relevance
            .total_cmp(&a.relevance)
            .then_with(|| b.similarity.total_cmp(&a.similarity))
            .then_with(|| a.id.cmp(&b.id))
    });
    candidates.truncate(k_final);
    Ok(Recommendation {
        query_id: query_id.to_string(),
        query_predictions: query_preds,
        candidates,
        dropped,
    })
}

/// CSV export: `rank,id,similarity,tg_pred,tm_pred,eg_pred,tapd,relevance`.
pub fn write_recommendation_csv(
    path: impl AsRef<Path>,
    rec: &Recommendation,
) -> Result<(), RankError> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    writeln!(w, "rank,id,similarity,tg_pred,tm_pred,eg_pred,tapd,relevance")?;
    for (rank, c) in rec.candidates.iter().enumerate() {
        writeln!(
            w,
            "{},{},{:.9},{},{},{},{},{}",
            rank + 1,
            c.id,
            c.similarity,
            c.predictions[0],
            c.predictions[1],
            c.predictions[2],
            c.tapd,
            c.relevance
        )?;
    }
    w.flush()?;
    Ok(())
}

/// JSON export carrying the same fields as the CSV.
pub fn write_recommendation_json(
    path: impl AsRef<Path>,
    rec: &Recommendation,
) -> Result<(), RankError> {
    #[derive(Serialize)]
    struct Row<'a> {
        rank: usize,
        #[serde(flatten)]
        candidate: &'a RankedCandidate,
    }
    let rows: Vec<Row<'_>> = rec
        .candidates
        .iter()
        .enumerate()
        .map(|(i, candidate)| Row { rank: i + 1, candidate })
        .collect();
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer_pretty(&mut w, &rows)
        .map_err(|e| RankError::Io(std::io::Error::other(e)))?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tapd_exact_match_is_zero() {
        let q = [400.0, 500.0, 2.0];
        assert_eq!(tapd(&q, &q, PropertySelection::default()).unwrap(), 0.0);
    }

    #[test]
    fn tapd_hand_computed() {
        let q = [400.0, 500.0, 2.0];
        let c = [440.0, 450.0, 2.2];
        let t = tapd(&c, &q, PropertySelection::default()).unwrap();
        assert!((t - 0.3).abs() < 1e-12, "tapd = {t}");
    }

    #[test]
    fn tapd_zero_query_guarded() {
        let q = [400.0, 500.0, 0.0];
        let c = [400.0, 500.0, 1.0];
        match tapd(&c, &q, PropertySelection::default()) {
            Err(RankError::QueryNearZero { property: "eg", .. }) => {}
            other => panic!("expected guard error, got {other:?}"),
        }
        // deselecting the offending property avoids the guard
        let sel = PropertySelection::of(&[Property::Tg, Property::Tm]);
        assert_eq!(tapd(&c, &q, sel).unwrap(), 0.0);
    }

    #[test]
    fn tapd_subset_selection() {
        let q = [400.0, 500.0, 2.0];
        let c = [440.0, 450.0, 2.2];
        let sel = PropertySelection::of(&[Property::Tg]);
        let t = tapd(&c, &q, sel).unwrap();
        assert!((t - 0.1).abs() < 1e-12);
        assert!(matches!(
            tapd(&c, &q, PropertySelection([false; 3])),
            Err(RankError::EmptySelection)
        ));
    }

    #[test]
    fn relevance_anchor_points() {
        assert_eq!(relevance(0.0).unwrap(), 100.0);
        assert_eq!(relevance(1.0).unwrap(), 50.0);
        let r = relevance(0.3).unwrap();
        assert!((r - 76.923076923).abs() < 1e-6, "r = {r}");
        assert!(matches!(relevance(-0.1), Err(RankError::NegativeTapd(_))));
    }

    #[test]
    fn relevance_strictly_decreasing() {
        let mut prev = relevance(0.0).unwrap();
        for i in 1..1000 {
            let t = i as f64 * 0.05;
            let r = relevance(t).unwrap();
            assert!(r < prev);
            assert!(r > 0.0 && r <= 100.0);
            prev = r;
        }
    }

    #[test]
    fn selection_parsing() {
        assert_eq!(PropertySelection::parse("tg,tm,eg"), Some(PropertySelection::default()));
        assert_eq!(
            PropertySelection::parse("eg"),
            Some(PropertySelection([false, false, true]))
        );
        assert_eq!(PropertySelection::parse("bogus"), None);
    }
}
