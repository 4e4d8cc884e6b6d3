//! Mean-pooled dense dual encoder with seeded word embeddings.

use std::collections::HashMap;

use super::{check_k, CorpusStats, InputPoint, RankedList, Scorer, SplitMix64};
use crate::corpus::{Corpus, Query};
use crate::{Error, Result};

pub const DEFAULT_DIM: usize = 64;

/// Scores `dot(mean of query token embeddings, document vector)`.
///
/// Word embeddings are drawn uniformly from `[-1, 1)` with the word's
/// SplitMix64 stream; a document vector is the mean embedding over all of
/// its token occurrences. Out-of-vocabulary query words embed to zero.
#[derive(Debug, Clone)]
pub struct DenseModel {
    seed: u64,
    dim: usize,
    embeddings: HashMap<String, Vec<f64>>,
    doc_ids: Vec<String>,
    doc_index: HashMap<String, usize>,
    /// Row-major, `doc_ids.len() * dim`.
    doc_vectors: Vec<f64>,
    stats: Option<CorpusStats>,
}

pub fn seeded_embedding(word: &str, seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = SplitMix64::for_word(word, seed);
    (0..dim).map(|_| rng.next_signed()).collect()
}

impl DenseModel {
    pub fn build(corpus: &Corpus, seed: u64, dim: usize) -> Result<Self> {
        Self::from_stats(CorpusStats::from_corpus(corpus), seed, dim)
    }

    pub fn from_stats(stats: CorpusStats, seed: u64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be positive".into(),
            ));
        }
        let table: Vec<Vec<f64>> = stats
            .vocabulary
            .iter()
            .map(|w| seeded_embedding(w, seed, dim))
            .collect();
        let mut doc_vectors = vec![0.0; stats.num_docs() * dim];
        for (pos, terms) in stats.doc_terms.iter().enumerate() {
            let total: u32 = terms.iter().map(|&(_, c)| c).sum();
            if total == 0 {
                continue;
            }
            let row = &mut doc_vectors[pos * dim..(pos + 1) * dim];
            for &(term, count) in terms {
                for (acc, x) in row.iter_mut().zip(&table[term as usize]) {
                    *acc += f64::from(count) * x;
                }
            }
            let total = f64::from(total);
            row.iter_mut().for_each(|x| *x /= total);
        }
        let embeddings = stats.vocabulary.iter().cloned().zip(table).collect();
        Ok(DenseModel {
            seed,
            dim,
            embeddings,
            doc_index: stats.doc_index(),
            doc_ids: stats.doc_ids.clone(),
            doc_vectors,
            stats: Some(stats),
        })
    }

    /// A model with explicit embeddings and document vectors, for fixtures.
    pub fn from_parts(
        dim: usize,
        embeddings: HashMap<String, Vec<f64>>,
        documents: Vec<(String, Vec<f64>)>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be positive".into(),
            ));
        }
        for v in embeddings.values().chain(documents.iter().map(|(_, v)| v)) {
            if v.len() != dim {
                return Err(Error::LengthMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
        }
        let doc_ids: Vec<String> = documents.iter().map(|(id, _)| id.clone()).collect();
        let doc_index = doc_ids
            .iter()
            .enumerate()
            .map(|(i, d)| (d.clone(), i))
            .collect();
        let doc_vectors = documents.into_iter().flat_map(|(_, v)| v).collect();
        Ok(DenseModel {
            seed: 0,
            dim,
            embeddings,
            doc_ids,
            doc_index,
            doc_vectors,
            stats: None,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn stats(&self) -> Option<&CorpusStats> {
        self.stats.as_ref()
    }

    pub fn embedding(&self, word: &str) -> Option<&[f64]> {
        self.embeddings.get(word).map(Vec::as_slice)
    }

    pub fn doc_vector(&self, doc_id: &str) -> Result<&[f64]> {
        let pos = self.position(doc_id)?;
        Ok(self.row(pos))
    }

    fn position(&self, doc_id: &str) -> Result<usize> {
        self.doc_index
            .get(doc_id)
            .copied()
            .ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))
    }

    fn row(&self, pos: usize) -> &[f64] {
        &self.doc_vectors[pos * self.dim..(pos + 1) * self.dim]
    }

    fn query_vector(&self, point: &InputPoint) -> Result<Vec<f64>> {
        let mut mean = vec![0.0; self.dim];
        if point.is_empty() {
            return Ok(mean);
        }
        for v in point {
            if v.len() != self.dim {
                return Err(Error::LengthMismatch {
                    expected: self.dim,
                    got: v.len(),
                });
            }
            mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
        }
        let n = point.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(mean)
    }

    /// Exhaustive top-k over every document.
    pub fn search(&self, query: &Query, k: usize) -> Result<RankedList> {
        check_k(k)?;
        let qv = self.query_vector(&self.input_of(&query.tokens))?;
        let scored = self
            .doc_ids
            .iter()
            .enumerate()
            .map(|(pos, id)| (id.clone(), dot(&qv, self.row(pos))))
            .collect();
        Ok(RankedList::from_scores(query.id.clone(), scored, k))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Scorer for DenseModel {
    fn input_of(&self, tokens: &[String]) -> InputPoint {
        tokens
            .iter()
            .map(|t| {
                self.embedding(t)
                    .map_or_else(|| vec![0.0; self.dim], <[f64]>::to_vec)
            })
            .collect()
    }

    fn score_at(&self, _tokens: &[String], point: &InputPoint, doc_id: &str) -> Result<f64> {
        let pos = self.position(doc_id)?;
        let qv = self.query_vector(point)?;
        Ok(dot(&qv, self.row(pos)))
    }

    fn gradient(&self, tokens: &[String], point: &InputPoint, doc_id: &str) -> Result<InputPoint> {
        let pos = self.position(doc_id)?;
        if point.len() != tokens.len() {
            return Err(Error::LengthMismatch {
                expected: tokens.len(),
                got: point.len(),
            });
        }
        let n = point.len() as f64;
        let grad: Vec<f64> = self.row(pos).iter().map(|x| x / n).collect();
        Ok(vec![grad; point.len()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn toy() -> DenseModel {
        let embeddings = HashMap::from([
            ("a".to_string(), vec![1.0, 0.0]),
            ("b".to_string(), vec![0.0, 1.0]),
        ]);
        DenseModel::from_parts(
            2,
            embeddings,
            vec![
                ("d1".into(), vec![2.0, 4.0]),
                ("d2".into(), vec![1.0, 0.0]),
                ("d3".into(), vec![0.0, 3.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_scores() {
        let m = toy();
        assert_eq!(m.score(&toks(&["a", "b"]), "d1").unwrap(), 3.0);
        assert_eq!(m.score(&toks(&["a"]), "d1").unwrap(), 2.0);
        assert_eq!(m.score(&[], "d1").unwrap(), 0.0);
        assert_eq!(m.score(&toks(&["zzz"]), "d1").unwrap(), 0.0);
        assert!(matches!(
            m.score(&toks(&["a"]), "nope"),
            Err(Error::UnknownDoc(_))
        ));
    }

    #[test]
    fn analytic_gradient_is_doc_over_n() {
        let m = toy();
        let tokens = toks(&["a", "b"]);
        let g = m.gradient(&tokens, &m.input_of(&tokens), "d1").unwrap();
        assert_eq!(g, vec![vec![1.0, 2.0], vec![1.0, 2.0]]);
    }

    #[test]
    fn search_brute_force_example() {
        let m = toy();
        // scores for [a, b]: d1 = 3, d2 = 0.5, d3 = 1.5
        let list = m.search(&Query::new("q", "a b"), 2).unwrap();
        assert_eq!(list.entries, vec![("d1".into(), 3.0), ("d3".into(), 1.5)]);
        assert_eq!(m.search(&Query::new("q", "a b"), 10).unwrap().len(), 3);
        assert!(m.search(&Query::new("q", "a"), 0).is_err());
    }

    #[test]
    fn document_vectors_are_mean_embeddings() {
        let corpus = Corpus::from_documents(vec![Document {
            id: "d".into(),
            title: None,
            text: "alpha beta alpha".into(),
        }])
        .unwrap();
        let m = DenseModel::build(&corpus, 11, 8).unwrap();
        let a = seeded_embedding("alpha", 11, 8);
        let b = seeded_embedding("beta", 11, 8);
        let v = m.doc_vector("d").unwrap();
        for i in 0..8 {
            assert!((v[i] - (2.0 * a[i] + b[i]) / 3.0).abs() < 1e-15);
        }
        assert_eq!(m.embedding("alpha").unwrap(), &a[..]);
        assert_ne!(seeded_embedding("alpha", 12, 8), a);
    }
}
