use super::{top_k, EmbeddingProvider, EmbeddingVector, ScoredDoc};
use crate::corpus::CorpusRecord;
use crate::error::{Error, Result};
use crate::linalg::dot;

/// Unit-norm document embeddings in corpus order.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn build(docs: &[CorpusRecord], provider: &dyn EmbeddingProvider) -> Result<Self> {
        let mut ids = Vec::with_capacity(docs.len());
        let mut vectors = Vec::with_capacity(docs.len());
        for d in docs {
            let e = provider.embed(&d.id, &d.text)?;
            ids.push(d.id.clone());
            vectors.push(e.values);
        }
        Self::from_parts(ids, vectors)
    }

    /// Rows must be unit-norm or all-zero (documents without tokens).
    pub fn from_parts(ids: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        for (id, v) in ids.iter().zip(&vectors) {
            let n2 = dot(v, v);
            if n2 != 0.0 && (n2.sqrt() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidRecord {
                    id: id.clone(),
                    message: format!("embedding norm {} is not 1", n2.sqrt()),
                });
            }
        }
        Ok(EmbeddingTable { ids, vectors })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids.iter().map(String::as_str).zip(self.vectors.iter().map(Vec::as_slice))
    }
}

/// Brute-force cosine search over the table.
pub fn dense_retrieve(table: &EmbeddingTable, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredDoc>> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let scored = table
        .iter()
        .map(|(id, v)| ScoredDoc {
            doc_id: id.to_string(),
            score: dot(v, &query.values),
        })
        .collect();
    Ok(top_k(scored, k))
}
