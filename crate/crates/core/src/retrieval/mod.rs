//! Base retrievers, embedding providers and the retriever pool.

mod bm25;
mod dense;
mod embed;
mod pool;

use serde::{Deserialize, Serialize};

pub use bm25::{bm25_retrieve, Bm25Index, Bm25Params};
pub use dense::{dense_retrieve, EmbeddingTable};
pub use embed::{embed_text, EmbeddingLine, DEFAULT_EMBEDDING_SEED, EmbeddingProvider, EmbeddingVector, FileEmbeddings, HashEmbedder};
pub use pool::{
    default_pool_specs, make_retriever_pool, Base, Reranker, RetrieverPool, RetrieverSpec,
};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// Retrieved documents for one query, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub retriever_id: String,
    pub items: Vec<ScoredDoc>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|d| d.doc_id.as_str())
    }
}

/// Sorts by score descending, ties by doc id ascending, and truncates to `k`.
pub(crate) fn top_k(mut scored: Vec<ScoredDoc>, k: usize) -> Vec<ScoredDoc> {
    scored.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    scored.truncate(k);
    scored
}
