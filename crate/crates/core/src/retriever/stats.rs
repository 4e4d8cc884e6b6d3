use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;

/// Vocabulary and per-document term counts, the part of a corpus a
/// reference scorer needs. This is also what an index snapshot persists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// Sorted vocabulary.
    pub vocabulary: Vec<String>,
    /// Document frequency per vocabulary entry.
    pub df: Vec<u32>,
    pub doc_ids: Vec<String>,
    /// Per document, `(term id, count)` sorted by term id.
    pub doc_terms: Vec<Vec<(u32, u32)>>,
}

impl CorpusStats {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let vocabulary: Vec<String> = corpus.vocabulary().keys().cloned().collect();
        let df = corpus.vocabulary().values().map(|&d| d as u32).collect();
        let term_ids: HashMap<&str, u32> = vocabulary
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i as u32))
            .collect();
        let mut doc_ids = Vec::with_capacity(corpus.len());
        let mut doc_terms = Vec::with_capacity(corpus.len());
        for (pos, doc) in corpus.documents().iter().enumerate() {
            let mut counts: HashMap<u32, u32> = HashMap::new();
            for token in corpus.tokens_at(pos) {
                *counts.entry(term_ids[token.as_str()]).or_default() += 1;
            }
            let mut terms: Vec<(u32, u32)> = counts.into_iter().collect();
            terms.sort_unstable();
            doc_ids.push(doc.id.clone());
            doc_terms.push(terms);
        }
        CorpusStats {
            vocabulary,
            df,
            doc_ids,
            doc_terms,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn term_index(&self) -> HashMap<String, u32> {
        self.vocabulary
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect()
    }

    pub fn doc_index(&self) -> HashMap<String, usize> {
        self.doc_ids
            .iter()
            .enumerate()
            .map(|(i, d)| (d.clone(), i))
            .collect()
    }
}
