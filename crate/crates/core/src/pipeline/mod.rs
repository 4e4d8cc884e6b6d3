//! The closed loop: search, attribute, rewrite, search again, evaluate.

mod compare;
mod config;
mod run;

pub use compare::{compare, compare_dirs, Comparison};
pub use config::{parse_pairs, RewriterKind, RunConfig};
pub use run::{open_retriever, open_rewriter, Experiment, MethodRun, QueryTrace, RunOutputs};
