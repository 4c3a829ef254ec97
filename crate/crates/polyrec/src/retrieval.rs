//! Exact top-k cosine retrieval over language embeddings.
//!
//! The index stores L2-normalized copies of every language embedding in one
//! contiguous row-major block; a query is answered by a full scan of dot
//! products with a bounded max-heap for selection, O(N*d + N*log k). Results
//! are exact: equal similarities are broken by ascending id.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::dataset::{Dataset, LANG_DIM};
use crate::nn::matrix::{dot, l2_norm};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("record `{0}` has a zero-norm language embedding")]
    ZeroNorm(String),
    #[error("record `{0}` has no language embedding attached")]
    NotAttached(String),
    #[error("query vector has dimension {actual}, index stores {expected}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("unknown query id `{0}`")]
    UnknownId(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("zero vector has no cosine similarity")]
    ZeroVector,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Cosine similarity `a.b / (|a||b|)`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimMismatch { expected: a.len(), actual: b.len() });
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    Ok(dot(a, b) / (na * nb))
}

/// One retrieval result.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHit {
    pub id: String,
    pub similarity: f64,
}

/// Immutable search index over unit-normalized language embeddings.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    ids: Vec<String>,
    unit_rows: Vec<f64>, // N x dim, row-major
    norms: Vec<f64>,
    dim: usize,
}

/// Query by corpus id (the query record itself is excluded from results)
/// or by a raw embedding vector.
#[derive(Debug, Clone, Copy)]
pub enum Query<'a> {
    Id(&'a str),
    Vector(&'a [f64]),
}

impl RetrievalIndex {
    /// Normalize every language embedding into the index. Record order is
    /// preserved; zero-norm embeddings are rejected by id.
    pub fn build(dataset: &Dataset) -> Result<Self, RetrievalError> {
        let n = dataset.len();
        let mut ids = Vec::with_capacity(n);
        let mut unit_rows = vec![0.0f64; n * LANG_DIM];
        let mut norms = Vec::with_capacity(n);
        for (i, rec) in dataset.records().iter().enumerate() {
            let emb = rec
                .lang_emb
                .as_ref()
                .ok_or_else(|| RetrievalError::NotAttached(rec.id.clone()))?;
            let norm = l2_norm(emb);
            if norm == 0.0 {
                return Err(RetrievalError::ZeroNorm(rec.id.clone()));
            }
            let row = &mut unit_rows[i * LANG_DIM..(i + 1) * LANG_DIM];
            for (dst, src) in row.iter_mut().zip(emb) {
                *dst = src / norm;
            }
            ids.push(rec.id.clone());
            norms.push(norm);
        }
        Ok(Self { ids, unit_rows, norms, dim: LANG_DIM })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn unit_row(&self, i: usize) -> &[f64] {
        &self.unit_rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Top-k most similar corpus entries, sorted by similarity descending
    /// with ties broken by ascending id.
    pub fn retrieve(&self, query: Query<'_>, k: usize) -> Result<Vec<RetrievalHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let (unit_query, exclude): (Vec<f64>, Option<usize>) = match query {
            Query::Id(id) => {
                let idx = self
                    .ids
                    .iter()
                    .position(|x| x == id)
                    .ok_or_else(|| RetrievalError::UnknownId(id.to_string()))?;
                (self.unit_row(idx).to_vec(), Some(idx))
            }
            Query::Vector(v) => {
                if v.len() != self.dim {
                    return Err(RetrievalError::DimMismatch { expected: self.dim, actual: v.len() });
                }
                let norm = l2_norm(v);
                if norm == 0.0 {
                    return Err(RetrievalError::ZeroVector);
                }
                (v.iter().map(|x| x / norm).collect(), None)
            }
        };

        // Min-heap of the k best so far: the root is the current worst.
        let mut heap: BinaryHeap<std::cmp::Reverse<HeapEntry<'_>>> = BinaryHeap::with_capacity(k + 1);
        for i in 0..self.len() {
            if exclude == Some(i) {
                continue;
            }
            let sim = dot(&unit_query, self.unit_row(i));
            let entry = HeapEntry { similarity: sim, id: &self.ids[i] };
            if heap.len() < k {
                heap.push(std::cmp::Reverse(entry));
            } else if let Some(worst) = heap.peek() {
                if entry > worst.0 {
                    heap.pop();
                    heap.push(std::cmp::Reverse(entry));
                }
            }
        }
        let mut hits: Vec<HeapEntry<'_>> = heap.into_iter().map(|r| r.0).collect();
        hits.sort_unstable_by(|a, b| b.cmp(a));
        Ok(hits
            .into_iter()
            .map(|h| RetrievalHit { id: h.id.to_string(), similarity: h.similarity })
            .collect())
    }
}

/// Heap ordering: greater means a better hit (higher similarity, then
/// lexicographically smaller id).
#[derive(Debug, Clone, Copy)]
struct HeapEntry<'a> {
    similarity: f64,
    id: &'a str,
}

impl PartialEq for HeapEntry<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry<'_> {}

impl PartialOrd for HeapEntry<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.similarity
            .total_cmp(&other.similarity)
            .then_with(|| other.id.cmp(self.id))
    }
}

/// CSV export `rank,id,similarity`, similarity printed at 9 decimal places.
pub fn write_hits_csv(path: impl AsRef<Path>, hits: &[RetrievalHit]) -> Result<(), RetrievalError> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    writeln!(w, "rank,id,similarity")?;
    for (rank, hit) in hits.iter().enumerate() {
        writeln!(w, "{},{},{:.9}", rank + 1, hit.id, hit.similarity)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PolymerRecord;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset_with_embeddings(embs: Vec<Vec<f64>>) -> Dataset {
        let records = embs
            .into_iter()
            .enumerate()
            .map(|(i, mut e)| {
                e.resize(LANG_DIM, 0.0);
                PolymerRecord {
                    id: format!("P{i:04}"),
                    smiles: "*CC*".into(),
                    lang_emb: Some(e),
                    graph_emb: Some(vec![0.0; crate::dataset::GRAPH_DIM]),
                    labels: [None; 3],
                }
            })
            .collect();
        Dataset::new(records).unwrap()
    }

    fn basis(i: usize, scale: f64) -> Vec<f64> {
        let mut v = vec![0.0; LANG_DIM];
        v[i] = scale;
        v
    }

    #[test]
    fn cosine_identities() {
        let v = vec![1.0, 2.0, 3.0];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        let e1 = vec![1.0, 0.0];
        let e2 = vec![0.0, 1.0];
        assert_eq!(cosine(&e1, &e2).unwrap(), 0.0);
        assert!(matches!(cosine(&[0.0, 0.0], &e1), Err(RetrievalError::ZeroVector)));
        assert!(matches!(cosine(&[1.0], &e1), Err(RetrievalError::DimMismatch { .. })));
    }

    #[test]
    fn cosine_scale_invariant() {
        let a = vec![0.3, -0.7, 2.0];
        let b = vec![1.1, 0.4, -0.2];
        let a2: Vec<f64> = a.iter().map(|x| 37.5 * x).collect();
        assert!((cosine(&a, &b).unwrap() - cosine(&a2, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn build_normalizes_rows() {
        let ds = dataset_with_embeddings(vec![basis(0, 5.0), basis(1, 0.25), basis(2, 1.0)]);
        let idx = RetrievalIndex::build(&ds).unwrap();
        assert_eq!(idx.len(), 3);
        for i in 0..3 {
            assert!((l2_norm(idx.unit_row(i)) - 1.0).abs() < 1e-9);
        }
        assert_eq!(idx.norms(), &[5.0, 0.25, 1.0]);
    }

    #[test]
    fn zero_vector_rejected_at_build() {
        let ds = dataset_with_embeddings(vec![basis(0, 1.0), vec![0.0; LANG_DIM]]);
        match RetrievalIndex::build(&ds) {
            Err(RetrievalError::ZeroNorm(id)) => assert_eq!(id, "P0001"),
            other => panic!("expected zero-norm error, got {other:?}"),
        }
    }

    #[test]
    fn id_query_excludes_itself_and_sorts() {
        // P0 aligned with P1, orthogonal to P2.
        let mut near = basis(0, 1.0);
        near[1] = 0.2;
        let ds = dataset_with_embeddings(vec![basis(0, 1.0), near, basis(1, 1.0)]);
        let idx = RetrievalIndex::build(&ds).unwrap();
        let hits = idx.retrieve(Query::Id("P0000"), 10).unwrap();
        assert_eq!(hits.len(), 2); // min(k, N-1)
        assert_eq!(hits[0].id, "P0001");
        assert_eq!(hits[1].id, "P0002");
        assert!(hits[0].similarity > hits[1].similarity);
    }

    #[test]
    fn vector_query_keeps_all_candidates() {
        let ds = dataset_with_embeddings(vec![basis(0, 1.0), basis(1, 1.0)]);
        let idx = RetrievalIndex::build(&ds).unwrap();
        let hits = idx.retrieve(Query::Vector(&basis(0, 2.0)), 10).unwrap();
        assert_eq!(hits.len(), 2); // min(k, N)
        assert_eq!(hits[0].id, "P0000");
    }

    #[test]
    fn ties_break_by_ascending_id() {
        // Three identical embeddings: similarities tie exactly.
        let ds = dataset_with_embeddings(vec![
            basis(0, 1.0),
            basis(0, 1.0),
            basis(0, 1.0),
            basis(0, 1.0),
        ]);
        let idx = RetrievalIndex::build(&ds).unwrap();
        let hits = idx.retrieve(Query::Id("P0002"), 2).unwrap();
        assert_eq!(hits[0].id, "P0000");
        assert_eq!(hits[1].id, "P0001");
    }

    #[test]
    fn unknown_id_and_zero_k_rejected() {
        let ds = dataset_with_embeddings(vec![basis(0, 1.0), basis(1, 1.0), basis(2, 1.0)]);
        let idx = RetrievalIndex::build(&ds).unwrap();
        assert!(matches!(idx.retrieve(Query::Id("nope"), 5), Err(RetrievalError::UnknownId(_))));
        assert!(matches!(idx.retrieve(Query::Id("P0000"), 0), Err(RetrievalError::ZeroK)));
    }

    #[test]
    fn matches_exhaustive_oracle_on_random_corpus() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let n = 300;
        let embs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..LANG_DIM).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ds = dataset_with_embeddings(embs);
        let idx = RetrievalIndex::build(&ds).unwrap();
        for qi in [0usize, 17, 123, 299] {
            let qid = format!("P{qi:04}");
            let hits = idx.retrieve(Query::Id(&qid), 25).unwrap();
            // oracle: score everything via cosine(), full sort, drop query
            let mut oracle: Vec<(f64, String)> = ds
                .records()
                .iter()
                .filter(|r| r.id != qid)
                .map(|r| {
                    let s = cosine(
                        ds.by_id(&qid).unwrap().lang_emb.as_ref().unwrap(),
                        r.lang_emb.as_ref().unwrap(),
                    )
                    .unwrap();
                    (s, r.id.clone())
                })
                .collect();
            oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
            oracle.truncate(25);
            let got: Vec<&str> = hits.iter().map(|h| h.id.as_str()).collect();
            let want: Vec<&str> = oracle.iter().map(|(_, id)| id.as_str()).collect();
            assert_eq!(got, want, "query {qid}");
        }
    }

    #[test]
    fn positive_scaling_leaves_results_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let embs: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..LANG_DIM).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut scaled = embs.clone();
        for (i, e) in scaled.iter_mut().enumerate() {
            let c = 0.5 + (i % 7) as f64;
            for v in e.iter_mut() {
                *v *= c;
            }
        }
        let a = RetrievalIndex::build(&dataset_with_embeddings(embs)).unwrap();
        let b = RetrievalIndex::build(&dataset_with_embeddings(scaled)).unwrap();
        for q in ["P0003", "P0042"] {
            let ha = a.retrieve(Query::Id(q), 20).unwrap();
            let hb = b.retrieve(Query::Id(q), 20).unwrap();
            let ia: Vec<&str> = ha.iter().map(|h| h.id.as_str()).collect();
            let ib: Vec<&str> = hb.iter().map(|h| h.id.as_str()).collect();
            assert_eq!(ia, ib);
        }
    }

    #[test]
    fn k_of_n_minus_one_returns_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let embs: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..LANG_DIM).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ds = dataset_with_embeddings(embs);
        let idx = RetrievalIndex::build(&ds).unwrap();
        let hits = idx.retrieve(Query::Id("P0000"), 39).unwrap();
        let mut got: Vec<&str> = hits.iter().map(|h| h.id.as_str()).collect();
        got.sort_unstable();
        let mut want: Vec<String> = (1..40).map(|i| format!("P{i:04}")).collect();
        want.sort_unstable();
        assert_eq!(got, want.iter().map(|s| s.as_str()).collect::<Vec<_>>());
        // similarities non-increasing
        for pair in hits.windows(2) {
            assert!(pair[0].similarity >= pair[1].similarity);
        }
    }
}
