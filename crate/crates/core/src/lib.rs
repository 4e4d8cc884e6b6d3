//! Attribution-guided query rewriting.
//!
//! The engine scores a query against a fixed retriever, attributes the
//! relevance of its top documents back to the individual query words with
//! Integrated Gradients, hands those scores to an instruct LLM as soft
//! guidance for a rewrite, and re-retrieves with the same retriever. The
//! [`pipeline`] module runs that loop next to three reference methods and
//! evaluates all of them with nDCG, MAP and precision at fixed cutoffs.
//!
//! Module map:
//!
//! - [`corpus`]: BEIR-format loading and word tokenization
//! - [`retriever`]: differentiable dense and learned-sparse reference scorers
//! - [`attribution`]: Integrated Gradients, top-k aggregation, normalization
//! - [`rewrite`]: prompts, rewriters (live endpoint, mocks), response cache
//! - [`eval`]: ranking metrics and macro averaging
//! - [`bridge`]: NDJSON client for an external transformer retriever
//! - [`pipeline`]: run configuration, method orchestration, comparison tables

pub mod attribution;
pub mod bridge;
pub mod corpus;
mod error;
pub mod eval;
pub mod pipeline;
pub mod retriever;
pub mod rewrite;

pub use error::{Error, Result};
