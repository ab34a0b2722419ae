//! Learning to rank retrievers.
//!
//! Builds a pool of retrievers over a corpus, extracts routing features for
//! every (query, retriever) option, labels options by their downstream
//! utility gain over answering without retrieval, trains scoring functions
//! that rank the options, and evaluates routing policies against train-free
//! heuristics, an oracle and the best single retriever.

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod jsonl;
pub mod labels;
pub mod linalg;
pub mod pipeline;
pub mod rerank;
pub mod retrieval;
pub mod synth;
pub mod text;
pub mod train;

pub use error::{Error, Result};
