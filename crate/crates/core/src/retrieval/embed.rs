use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::linalg::normalized;
use crate::text::{derive_seed, tokenize};

pub const DEFAULT_EMBEDDING_SEED: u64 = 0x005e_ede5_ba5e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    /// False only for the all-zero sentinel returned for token-less text.
    pub unit: bool,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn zero(dim: usize) -> Self {
        EmbeddingVector {
            values: vec![0.0; dim],
            unit: false,
        }
    }

    fn from_raw(raw: &[f64]) -> Self {
        match normalized(raw) {
            Some(values) => EmbeddingVector { values, unit: true },
            None => EmbeddingVector::zero(raw.len()),
        }
    }
}

fn token_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, token));
    let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalized(&raw).unwrap_or_else(|| {
        let mut e = vec![0.0; dim];
        e[0] = 1.0;
        e
    })
}

/// Hash-projection embedding: every token maps to a seeded pseudo-random unit
/// vector, and the text embedding is the normalized mean of its token vectors.
pub fn embed_text(text: &str, dim: usize, seed: u64) -> Result<EmbeddingVector> {
    if dim < 8 {
        return Err(Error::invalid(format!("embedding dim {dim} must be >= 8")));
    }
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Ok(EmbeddingVector::zero(dim));
    }
    let mut acc = vec![0.0; dim];
    for t in &tokens {
        for (a, x) in acc.iter_mut().zip(token_vector(t, dim, seed)) {
            *a += x;
        }
    }
    acc.iter_mut().for_each(|a| *a /= tokens.len() as f64);
    Ok(EmbeddingVector::from_raw(&acc))
}

/// Source of record embeddings. `id` is the document or query id.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, id: &str, text: &str) -> Result<EmbeddingVector>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < 8 {
            return Err(Error::invalid(format!("embedding dim {dim} must be >= 8")));
        }
        Ok(HashEmbedder { dim, seed })
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, _id: &str, text: &str) -> Result<EmbeddingVector> {
        embed_text(text, self.dim, self.seed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingLine {
    pub id: String,
    pub vector: Vec<f64>,
}

/// Precomputed vectors keyed by record id, normalized on load.
#[derive(Debug, Clone)]
pub struct FileEmbeddings {
    dim: usize,
    vectors: HashMap<String, EmbeddingVector>,
}

impl FileEmbeddings {
    pub fn load(path: &Path) -> Result<Self> {
        let lines: Vec<EmbeddingLine> = jsonl::read_jsonl(path)?;
        Self::from_lines(lines)
    }

    pub fn from_lines(lines: Vec<EmbeddingLine>) -> Result<Self> {
        let dim = lines.first().map_or(0, |l| l.vector.len());
        let mut vectors = HashMap::with_capacity(lines.len());
        for line in lines {
            if line.vector.len() != dim {
                return Err(Error::LengthMismatch {
                    expected: dim,
                    actual: line.vector.len(),
                });
            }
            if line.vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidRecord {
                    id: line.id,
                    message: "non-finite embedding entry".into(),
                });
            }
            let v = EmbeddingVector::from_raw(&line.vector);
            if vectors.insert(line.id.clone(), v).is_some() {
                return Err(Error::DuplicateId(line.id));
            }
        }
        Ok(FileEmbeddings { dim, vectors })
    }
}

impl EmbeddingProvider for FileEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, id: &str, _text: &str) -> Result<EmbeddingVector> {
        self.vectors.get(id).cloned().ok_or_else(|| Error::InvalidRecord {
            id: id.to_string(),
            message: "no precomputed embedding".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cosine, norm};

    #[test]
    fn deterministic_and_unit() {
        let a = embed_text("the quick brown fox", 64, 7).unwrap();
        let b = embed_text("the quick brown fox", 64, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.unit);
        assert!((norm(&a.values) - 1.0).abs() < 1e-9);
        assert!((cosine(&a.values, &b.values) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_text_is_zero_sentinel() {
        let e = embed_text("  ... ", 16, 1).unwrap();
        assert!(!e.unit);
        assert!(e.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn disjoint_texts_are_nearly_orthogonal() {
        let a = embed_text("volcanic basalt eruption lava", 256, DEFAULT_EMBEDDING_SEED).unwrap();
        let b = embed_text("symphony orchestra violin concerto", 256, DEFAULT_EMBEDDING_SEED).unwrap();
        let c = cosine(&a.values, &b.values);
        assert!(c.abs() < 0.2, "{c}");
        // Regression value for the default seed.
        assert!((c - DISJOINT_COSINE).abs() < 1e-12, "{c}");
    }

    const DISJOINT_COSINE: f64 = -0.020151237901132768;

    #[test]
    fn small_dim_rejected() {
        assert!(embed_text("x", 4, 0).is_err());
    }

    #[test]
    fn file_provider_normalizes_and_looks_up() {
        let p = FileEmbeddings::from_lines(vec![EmbeddingLine { id: "d1".into(), vector: vec![3.0, 4.0] }]).unwrap();
        let v = p.embed("d1", "").unwrap();
        assert!((v.values[0] - 0.6).abs() < 1e-12);
        assert!(p.embed("missing", "").is_err());
    }
}
