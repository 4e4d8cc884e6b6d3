//! JSON index snapshots.
//!
//! A snapshot holds the scorer kind, seed, embedding dimension, expansion
//! count, the sorted vocabulary with document frequencies and the per-document
//! term counts. Everything else (embeddings, document vectors, idf, postings)
//! is a pure function of those fields and is rebuilt on load.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusStats, DenseModel, NativeRetriever, RetrieverKind, SparseModel};
use crate::{Error, Result};

const FORMAT: &str = "qrewrite-index";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSnapshot {
    pub format: String,
    pub version: u32,
    pub kind: RetrieverKind,
    pub seed: u64,
    pub dim: usize,
    pub expansions: usize,
    pub stats: CorpusStats,
}

impl IndexSnapshot {
    pub fn capture(retriever: &NativeRetriever) -> Result<Self> {
        let (kind, seed, dim, expansions, stats) = match retriever {
            NativeRetriever::Dense(m) => {
                let stats = m.stats().ok_or_else(|| {
                    Error::InvalidArgument(
                        "dense model built from explicit parts has no corpus statistics".into(),
                    )
                })?;
                (RetrieverKind::Dense, m.seed(), m.dim(), 0, stats.clone())
            }
            NativeRetriever::Sparse(m) => (
                RetrieverKind::Sparse,
                m.seed(),
                0,
                m.expansions(),
                m.stats().clone(),
            ),
        };
        Ok(IndexSnapshot {
            format: FORMAT.into(),
            version: VERSION,
            kind,
            seed,
            dim,
            expansions,
            stats,
        })
    }

    pub fn restore(&self) -> Result<NativeRetriever> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported index snapshot {} v{}",
                self.format, self.version
            )));
        }
        if self.stats.doc_ids.len() != self.stats.doc_terms.len()
            || self.stats.vocabulary.len() != self.stats.df.len()
        {
            return Err(Error::InvalidArgument(
                "inconsistent snapshot statistics".into(),
            ));
        }
        let vocab = self.stats.vocabulary.len() as u32;
        if self
            .stats
            .doc_terms
            .iter()
            .flatten()
            .any(|&(term, _)| term >= vocab)
        {
            return Err(Error::InvalidArgument(
                "snapshot term id out of range".into(),
            ));
        }
        match self.kind {
            RetrieverKind::Dense => Ok(NativeRetriever::Dense(DenseModel::from_stats(
                self.stats.clone(),
                self.seed,
                self.dim,
            )?)),
            RetrieverKind::Sparse => Ok(NativeRetriever::Sparse(SparseModel::from_stats(
                self.stats.clone(),
                self.seed,
                self.expansions,
            ))),
            RetrieverKind::Bridge => Err(Error::InvalidArgument(
                "bridge retrievers have no snapshot".into(),
            )),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        serde_json::to_writer(&mut out, self)?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}
