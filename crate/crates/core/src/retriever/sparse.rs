//! Learned-sparse style scorer: seeded query expansion over the corpus
//! vocabulary, idf-weighted term frequencies and log saturation.
//!
//! With one non-negative weight `u_i` per query token,
//!
//! ```text
//! score(u, d) = Σ_v idf_v · tf_v(d) · ln(1 + Σ_i u_i · A[t_i, v])
//! ```
//!
//! where `A[t, ·]` is the expansion row of word `t`: `(t, 1.0)` plus up to
//! `expansions` seeded vocabulary words with weights in `(0, 0.5]`. The true
//! query sits at `u = 1` and the zero baseline scores exactly 0.

use std::collections::{BTreeMap, HashMap};

use super::{check_k, CorpusStats, InputPoint, RankedList, Scorer, SplitMix64};
use crate::corpus::{Corpus, Query};
use crate::{Error, Result};

pub const DEFAULT_EXPANSIONS: usize = 3;

/// One entry of an expansion row. `term` is `None` for an out-of-vocabulary
/// word's self-expansion, which matches no document.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expansion {
    pub term: Option<u32>,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct SparseModel {
    seed: u64,
    expansions: usize,
    stats: CorpusStats,
    term_index: HashMap<String, u32>,
    doc_index: HashMap<String, usize>,
    idf: Vec<f64>,
    /// Per term, `(doc position, tf)` in ascending doc order.
    postings: Vec<Vec<(u32, u32)>>,
    /// Explicit expansion rows that replace the seeded ones.
    overrides: HashMap<String, Vec<Expansion>>,
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`, strictly positive for `df ≤ N`.
pub fn idf(num_docs: usize, df: usize) -> f64 {
    let n = num_docs as f64;
    let df = df as f64;
    ((n - df + 0.5) / (df + 0.5)).ln_1p()
}

impl SparseModel {
    pub fn build(corpus: &Corpus, seed: u64, expansions: usize) -> Self {
        Self::from_stats(CorpusStats::from_corpus(corpus), seed, expansions)
    }

    pub fn from_stats(stats: CorpusStats, seed: u64, expansions: usize) -> Self {
        let n = stats.num_docs();
        let idf_table = stats.df.iter().map(|&df| idf(n, df as usize)).collect();
        let mut postings = vec![Vec::new(); stats.vocabulary.len()];
        for (pos, terms) in stats.doc_terms.iter().enumerate() {
            for &(term, tf) in terms {
                postings[term as usize].push((pos as u32, tf));
            }
        }
        SparseModel {
            seed,
            expansions,
            term_index: stats.term_index(),
            doc_index: stats.doc_index(),
            idf: idf_table,
            postings,
            overrides: HashMap::new(),
            stats,
        }
    }

    /// Replaces the seeded expansion row of `word` with explicit
    /// `(vocabulary word, weight)` pairs. The self pair is added if absent.
    pub fn with_expansion(mut self, word: &str, pairs: &[(&str, f64)]) -> Result<Self> {
        let mut row = vec![Expansion {
            term: self.term_index.get(word).copied(),
            weight: 1.0,
        }];
        for &(target, weight) in pairs {
            if target == word {
                continue;
            }
            if !(weight > 0.0 && weight <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "expansion weight {weight} outside (0, 1]"
                )));
            }
            let term = *self.term_index.get(target).ok_or_else(|| {
                Error::InvalidArgument(format!("expansion target `{target}` not in vocabulary"))
            })?;
            row.push(Expansion {
                term: Some(term),
                weight,
            });
        }
        self.overrides.insert(word.to_string(), row);
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn expansions(&self) -> usize {
        self.expansions
    }

    pub fn stats(&self) -> &CorpusStats {
        &self.stats
    }

    pub fn num_docs(&self) -> usize {
        self.stats.num_docs()
    }

    /// idf of a word; unseen words get the `df = 0` value.
    pub fn idf_of(&self, word: &str) -> f64 {
        match self.term_index.get(word) {
            Some(&t) => self.idf[t as usize],
            None => idf(self.num_docs(), 0),
        }
    }

    /// The expansion row `A[word, ·]`.
    ///
    /// Seeded rows draw `expansions` (index, weight) pairs from the word's
    /// SplitMix64 stream: index `next_u64() % |V|`, then weight
    /// `0.5 · (1 − unit)`. Draws landing on the word itself or on an
    /// already chosen term are skipped.
    pub fn expansion(&self, word: &str) -> Vec<Expansion> {
        if let Some(row) = self.overrides.get(word) {
            return row.clone();
        }
        let Some(&own) = self.term_index.get(word) else {
            return vec![Expansion {
                term: None,
                weight: 1.0,
            }];
        };
        let mut row = vec![Expansion {
            term: Some(own),
            weight: 1.0,
        }];
        let vocab = self.stats.vocabulary.len() as u64;
        let mut rng = SplitMix64::for_word(word, self.seed);
        for _ in 0..self.expansions {
            let term = (rng.next_u64() % vocab) as u32;
            let weight = rng.next_expansion_weight();
            if row.iter().any(|e| e.term == Some(term)) {
                continue;
            }
            row.push(Expansion {
                term: Some(term),
                weight,
            });
        }
        row
    }

    fn position(&self, doc_id: &str) -> Result<usize> {
        self.doc_index
            .get(doc_id)
            .copied()
            .ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))
    }

    fn tf(&self, pos: usize, term: u32) -> u32 {
        let terms = &self.stats.doc_terms[pos];
        terms
            .binary_search_by_key(&term, |&(t, _)| t)
            .map_or(0, |i| terms[i].1)
    }

    fn weights(point: &InputPoint) -> Result<Vec<f64>> {
        point
            .iter()
            .map(|v| {
                let u = *v.first().ok_or(Error::LengthMismatch {
                    expected: 1,
                    got: 0,
                })?;
                if u < 0.0 {
                    Err(Error::NegativeWeight(u))
                } else {
                    Ok(u)
                }
            })
            .collect()
    }

    /// Expanded query term weights `w_v = Σ_i u_i · A[t_i, v]`, in term order.
    fn expanded(&self, rows: &[Vec<Expansion>], u: &[f64]) -> BTreeMap<u32, f64> {
        let mut w = BTreeMap::new();
        for (row, &ui) in rows.iter().zip(u) {
            for e in row {
                if let Some(term) = e.term {
                    *w.entry(term).or_insert(0.0) += ui * e.weight;
                }
            }
        }
        w
    }

    fn rows(&self, tokens: &[String]) -> Vec<Vec<Expansion>> {
        tokens.iter().map(|t| self.expansion(t)).collect()
    }

    fn check_shape(tokens: &[String], point: &InputPoint) -> Result<()> {
        if tokens.len() != point.len() {
            return Err(Error::LengthMismatch {
                expected: tokens.len(),
                got: point.len(),
            });
        }
        Ok(())
    }

    /// Inverted-index top-k. Only documents sharing at least one expanded
    /// term with positive weight are returned.
    pub fn search(&self, query: &Query, k: usize) -> Result<RankedList> {
        check_k(k)?;
        let u = vec![1.0; query.tokens.len()];
        let w = self.expanded(&self.rows(&query.tokens), &u);
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for (&term, &wv) in &w {
            if wv <= 0.0 {
                continue;
            }
            let idf = self.idf[term as usize];
            let sat = wv.ln_1p();
            for &(pos, tf) in &self.postings[term as usize] {
                *acc.entry(pos).or_insert(0.0) += idf * f64::from(tf) * sat;
            }
        }
        let scored = acc
            .into_iter()
            .map(|(pos, s)| (self.stats.doc_ids[pos as usize].clone(), s))
            .collect();
        Ok(RankedList::from_scores(query.id.clone(), scored, k))
    }

    /// Closed-form Integrated Gradients on the straight path from `u = 0`
    /// to `u = 1`: `Σ_v idf_v·tf_v(d)·A[t_i,v]·ln(1 + s_v)/s_v` with
    /// `s_v = Σ_j A[t_j, v]` (the `s_v → 0` limit of the ratio is 1).
    pub fn exact_integrated_gradients(&self, tokens: &[String], doc_id: &str) -> Result<Vec<f64>> {
        let pos = self.position(doc_id)?;
        let rows = self.rows(tokens);
        let s = self.expanded(&rows, &vec![1.0; tokens.len()]);
        Ok(rows
            .iter()
            .map(|row| {
                row.iter()
                    .filter_map(|e| e.term.map(|t| (t, e.weight)))
                    .map(|(term, a)| {
                        let tf = self.tf(pos, term);
                        if tf == 0 {
                            return 0.0;
                        }
                        let sv = s[&term];
                        let ratio = if sv > 0.0 { sv.ln_1p() / sv } else { 1.0 };
                        self.idf[term as usize] * f64::from(tf) * a * ratio
                    })
                    .sum()
            })
            .collect())
    }
}

impl Scorer for SparseModel {
    fn input_of(&self, tokens: &[String]) -> InputPoint {
        vec![vec![1.0]; tokens.len()]
    }

    fn score_at(&self, tokens: &[String], point: &InputPoint, doc_id: &str) -> Result<f64> {
        Self::check_shape(tokens, point)?;
        let pos = self.position(doc_id)?;
        let u = Self::weights(point)?;
        let w = self.expanded(&self.rows(tokens), &u);
        let mut score = 0.0;
        for (&term, &wv) in &w {
            if wv <= 0.0 {
                continue;
            }
            let tf = self.tf(pos, term);
            if tf > 0 {
                score += self.idf[term as usize] * f64::from(tf) * wv.ln_1p();
            }
        }
        Ok(score)
    }

    fn gradient(&self, tokens: &[String], point: &InputPoint, doc_id: &str) -> Result<InputPoint> {
        Self::check_shape(tokens, point)?;
        let pos = self.position(doc_id)?;
        let u = Self::weights(point)?;
        let rows = self.rows(tokens);
        let w = self.expanded(&rows, &u);
        Ok(rows
            .iter()
            .map(|row| {
                let g: f64 = row
                    .iter()
                    .filter_map(|e| e.term.map(|t| (t, e.weight)))
                    .map(|(term, a)| {
                        let tf = self.tf(pos, term);
                        if tf == 0 {
                            0.0
                        } else {
                            self.idf[term as usize] * f64::from(tf) * a / (1.0 + w[&term])
                        }
                    })
                    .sum();
                vec![g]
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            id: id.into(),
            title: None,
            text: text.into(),
        }
    }

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    /// Corpus where `idf(x) · tf(x, d1) = 2` exactly is awkward to hit, so the
    /// hand examples rescale by the model's own idf.
    fn small() -> SparseModel {
        let corpus = Corpus::from_documents(vec![
            doc("d1", "apple apple banana"),
            doc("d2", "banana cherry"),
            doc("d3", "cherry date"),
        ])
        .unwrap();
        SparseModel::build(&corpus, 5, 0)
    }

    #[test]
    fn idf_formula_and_unseen_terms() {
        let m = small();
        assert!((m.idf_of("apple") - (1.0f64 + 2.5 / 1.5).ln()).abs() < 1e-15);
        assert!((m.idf_of("banana") - (1.0f64 + 1.5 / 2.5).ln()).abs() < 1e-15);
        assert!((m.idf_of("unseen") - (1.0f64 + 3.5 / 0.5).ln()).abs() < 1e-15);
        for w in ["apple", "banana", "cherry", "date"] {
            assert!(m.idf_of(w) > 0.0);
        }
    }

    #[test]
    fn self_only_single_token_score() {
        let m = small();
        let c = m.idf_of("apple") * 2.0;
        let tokens = toks(&["apple"]);
        let s = m.score(&tokens, "d1").unwrap();
        assert!((s - c * 2f64.ln()).abs() < 1e-12);
        // when idf·tf = 2 this is 2·ln 2 ≈ 1.3863
        assert!((s / c * 2.0 - 1.386_294_361_119_890_6).abs() < 1e-12);
        assert_eq!(m.score_at(&tokens, &vec![vec![0.0]], "d1").unwrap(), 0.0);
        assert!(matches!(
            m.score_at(&tokens, &vec![vec![-0.5]], "d1"),
            Err(Error::NegativeWeight(_))
        ));
    }

    #[test]
    fn shared_expansion_target_saturates_jointly() {
        // "date" expands onto "apple" with weight 0.5; "apple" self-expands
        let m = small().with_expansion("date", &[("apple", 0.5)]).unwrap();
        let tokens = toks(&["apple", "date"]);
        let c = m.idf_of("apple") * 2.0;
        let s = m.score(&tokens, "d1").unwrap();
        assert!((s / c - 2.5f64.ln()).abs() < 1e-12);
        assert!((2.5f64.ln() - 0.916_290_731_874_155).abs() < 1e-12);
    }

    #[test]
    fn gradient_at_zero_equals_idf_tf() {
        let m = small();
        let tokens = toks(&["apple"]);
        let g = m.gradient(&tokens, &vec![vec![0.0]], "d1").unwrap();
        assert!((g[0][0] - m.idf_of("apple") * 2.0).abs() < 1e-12);
    }

    #[test]
    fn seeded_expansions_are_well_formed() {
        let corpus = Corpus::from_documents(
            (0..40)
                .map(|i| doc(&format!("d{i}"), &format!("w{i} w{} common", i % 7)))
                .collect(),
        )
        .unwrap();
        let m = SparseModel::build(&corpus, 99, DEFAULT_EXPANSIONS);
        for word in corpus.vocabulary().keys() {
            let row = m.expansion(word);
            assert!(!row.is_empty() && row.len() <= 1 + DEFAULT_EXPANSIONS);
            assert_eq!(row[0].weight, 1.0);
            assert_eq!(row[0].term, m.term_index.get(word).copied());
            for e in &row[1..] {
                assert!(e.weight > 0.0 && e.weight <= 0.5);
                assert_ne!(e.term, row[0].term);
            }
            assert_eq!(row, m.expansion(word));
        }
        assert_eq!(
            m.expansion("oov"),
            vec![Expansion {
                term: None,
                weight: 1.0
            }]
        );
    }

    #[test]
    fn search_skips_docs_without_overlap() {
        let m = small();
        let list = m.search(&Query::new("q", "apple"), 10).unwrap();
        assert_eq!(list.doc_ids(), ["d1"]);
        let list = m.search(&Query::new("q", "banana cherry"), 10).unwrap();
        assert_eq!(list.doc_ids()[0], "d2");
        assert_eq!(list.len(), 3);
        assert!(m.search(&Query::new("q", "nothing"), 3).unwrap().is_empty());
    }
}
