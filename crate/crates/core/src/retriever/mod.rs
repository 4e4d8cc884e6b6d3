//! Fixed, differentiable retrievers.
//!
//! Two reference scorers stand in for the neural retrievers the method is
//! meant for: a mean-pooled dense dual encoder ([`DenseModel`]) and a
//! learned-sparse expansion model with log saturation ([`SparseModel`]).
//! Both expose the [`Scorer`] contract that Integrated Gradients needs:
//! a query input point, a zero baseline, a score at any point on the path
//! and its analytic gradient. The external transformer bridge implements
//! only the coarser [`Retriever`] trait.

mod dense;
mod seed;
mod snapshot;
mod sparse;
mod stats;

use serde::{Deserialize, Serialize};

use crate::attribution::{ig_single, AttributionVector};
use crate::corpus::{Corpus, Query};
use crate::{Error, Result};

pub use dense::{seeded_embedding, DenseModel, DEFAULT_DIM};
pub use seed::{fnv1a64, SplitMix64};
pub use snapshot::IndexSnapshot;
pub use sparse::{idf, Expansion, SparseModel, DEFAULT_EXPANSIONS};
pub use stats::CorpusStats;

/// Query-side input: one vector per query token (embedding dimensions for
/// the dense scorer, a single weight for the sparse scorer).
pub type InputPoint = Vec<Vec<f64>>;

/// A relevance scorer that can be differentiated with respect to its
/// query-side inputs.
pub trait Scorer: Send + Sync {
    /// The input point of the actual query.
    fn input_of(&self, tokens: &[String]) -> InputPoint;

    /// The all-zeros point with the same shape as [`Scorer::input_of`].
    fn baseline_of(&self, tokens: &[String]) -> InputPoint {
        self.input_of(tokens)
            .into_iter()
            .map(|v| vec![0.0; v.len()])
            .collect()
    }

    fn score_at(&self, tokens: &[String], point: &InputPoint, doc_id: &str) -> Result<f64>;

    fn gradient(&self, tokens: &[String], point: &InputPoint, doc_id: &str) -> Result<InputPoint>;

    fn score(&self, tokens: &[String], doc_id: &str) -> Result<f64> {
        self.score_at(tokens, &self.input_of(tokens), doc_id)
    }
}

/// What the pipeline needs from a retriever: search and per-document
/// token attributions.
pub trait Retriever: Send + Sync {
    fn describe(&self) -> String;

    fn search(&self, query: &Query, k: usize) -> Result<RankedList>;

    fn attribute(
        &self,
        query: &Query,
        doc_ids: &[String],
        steps: usize,
    ) -> Result<Vec<AttributionVector>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    pub fn empty(query_id: impl Into<String>) -> Self {
        RankedList {
            query_id: query_id.into(),
            entries: Vec::new(),
        }
    }

    /// Ranks `scored` by descending score, ties by ascending doc id, and keeps `k`.
    pub fn from_scores(
        query_id: impl Into<String>,
        mut scored: Vec<(String, f64)>,
        k: usize,
    ) -> Self {
        let by_rank =
            |a: &(String, f64), b: &(String, f64)| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0));
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_by(by_rank);
        RankedList {
            query_id: query_id.into(),
            entries: scored,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.entries.iter().map(|(id, _)| id.clone()).collect()
    }

    pub fn head(&self, k: usize) -> &[(String, f64)] {
        &self.entries[..k.min(self.entries.len())]
    }
}

pub(crate) fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "search depth k must be at least 1".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrieverKind {
    Dense,
    Sparse,
    Bridge,
}

impl std::str::FromStr for RetrieverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(RetrieverKind::Dense),
            "sparse" => Ok(RetrieverKind::Sparse),
            "bridge" => Ok(RetrieverKind::Bridge),
            other => Err(Error::InvalidArgument(format!(
                "unknown retriever `{other}` (expected dense, sparse or bridge)"
            ))),
        }
    }
}

impl std::fmt::Display for RetrieverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RetrieverKind::Dense => "dense",
            RetrieverKind::Sparse => "sparse",
            RetrieverKind::Bridge => "bridge",
        })
    }
}

/// One of the in-process reference scorers.
#[derive(Debug, Clone)]
pub enum NativeRetriever {
    Dense(DenseModel),
    Sparse(SparseModel),
}

impl NativeRetriever {
    pub fn build(
        kind: RetrieverKind,
        corpus: &Corpus,
        seed: u64,
        dim: usize,
        expansions: usize,
    ) -> Result<Self> {
        match kind {
            RetrieverKind::Dense => Ok(NativeRetriever::Dense(DenseModel::build(
                corpus, seed, dim,
            )?)),
            RetrieverKind::Sparse => Ok(NativeRetriever::Sparse(SparseModel::build(
                corpus, seed, expansions,
            ))),
            RetrieverKind::Bridge => Err(Error::InvalidArgument(
                "the bridge retriever is not an in-process scorer".into(),
            )),
        }
    }

    pub fn from_snapshot(snapshot: &IndexSnapshot) -> Result<Self> {
        snapshot.restore()
    }

    pub fn snapshot(&self) -> Result<IndexSnapshot> {
        IndexSnapshot::capture(self)
    }

    pub fn scorer(&self) -> &dyn Scorer {
        match self {
            NativeRetriever::Dense(m) => m,
            NativeRetriever::Sparse(m) => m,
        }
    }
}

impl Retriever for NativeRetriever {
    fn describe(&self) -> String {
        match self {
            NativeRetriever::Dense(m) => format!("dense(seed={}, dim={})", m.seed(), m.dim()),
            NativeRetriever::Sparse(m) => {
                format!("sparse(seed={}, expansions={})", m.seed(), m.expansions())
            }
        }
    }

    fn search(&self, query: &Query, k: usize) -> Result<RankedList> {
        match self {
            NativeRetriever::Dense(m) => m.search(query, k),
            NativeRetriever::Sparse(m) => m.search(query, k),
        }
    }

    fn attribute(
        &self,
        query: &Query,
        doc_ids: &[String],
        steps: usize,
    ) -> Result<Vec<AttributionVector>> {
        doc_ids
            .iter()
            .map(|doc| ig_single(self.scorer(), &query.tokens, doc, steps))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranked_list_orders_and_truncates() {
        let scored = vec![
            ("d1".to_string(), 3.0),
            ("d2".to_string(), 1.0),
            ("d3".to_string(), 2.0),
        ];
        let list = RankedList::from_scores("q", scored.clone(), 2);
        assert_eq!(list.entries, vec![("d1".into(), 3.0), ("d3".into(), 2.0)]);
        let all = RankedList::from_scores("q", scored, 10);
        assert_eq!(all.doc_ids(), ["d1", "d3", "d2"]);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let scored = vec![("d2".to_string(), 1.0), ("d1".to_string(), 1.0)];
        let list = RankedList::from_scores("q", scored, 2);
        assert_eq!(list.entries, vec![("d1".into(), 1.0), ("d2".into(), 1.0)]);
    }

    #[test]
    fn parses_retriever_kind() {
        assert_eq!(
            "sparse".parse::<RetrieverKind>().unwrap(),
            RetrieverKind::Sparse
        );
        assert!("colbert".parse::<RetrieverKind>().is_err());
    }
}
