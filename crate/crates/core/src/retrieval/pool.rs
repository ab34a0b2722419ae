use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{
    bm25_retrieve, dense_retrieve, top_k, Bm25Index, Bm25Params, EmbeddingProvider, EmbeddingTable,
    EmbeddingVector, RankedList, ScoredDoc,
};
use crate::corpus::CorpusRecord;
use crate::error::{Error, Result};
use crate::rerank::{plackett_luce_rerank, regularize_scores, RegularizationParams, StochasticParams};
use crate::text::{derive_seed, tokenize};

/// Candidates fetched from the base retriever before a reranker reorders them.
pub const DEFAULT_RERANK_DEPTH: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Base {
    Bm25,
    Dense,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reranker {
    #[default]
    None,
    Regularize,
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieverSpec {
    pub id: String,
    pub base: Base,
    #[serde(default)]
    pub reranker: Reranker,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

impl RetrieverSpec {
    pub fn new(id: &str, base: Base, reranker: Reranker) -> Self {
        RetrieverSpec {
            id: id.to_string(),
            base,
            reranker,
            params: BTreeMap::new(),
        }
    }

    fn allowed_params(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        if self.base == Base::Bm25 {
            keys.extend(["k1", "b"]);
        }
        match self.reranker {
            Reranker::None => {}
            Reranker::Regularize => keys.extend(["depth", "m", "t"]),
            Reranker::Stochastic => keys.extend(["depth", "alpha", "n_samples", "seed"]),
        }
        keys
    }

    fn param(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }

    fn count_param(&self, key: &str, default: usize, min: usize) -> Result<usize> {
        let v = self.param(key, default as f64);
        if v.fract() != 0.0 || v < min as f64 {
            return Err(Error::Config {
                field: format!("pool.{}.params.{key}", self.id),
                message: format!("expected an integer >= {min}, got {v}"),
            });
        }
        Ok(v as usize)
    }
}

/// The six retrievers (two bases times three reranking modes) plus no-retrieval.
pub fn default_pool_specs() -> Vec<RetrieverSpec> {
    let mut specs = Vec::new();
    for (base, name) in [(Base::Bm25, "bm25"), (Base::Dense, "dense")] {
        specs.push(RetrieverSpec::new(name, base, Reranker::None));
        specs.push(RetrieverSpec::new(&format!("{name}+regularize"), base, Reranker::Regularize));
        specs.push(RetrieverSpec::new(&format!("{name}+stochastic"), base, Reranker::Stochastic));
    }
    specs.push(RetrieverSpec::new("none", Base::None, Reranker::None));
    specs
}

#[derive(Debug, Clone)]
enum Rerank {
    None,
    Regularize { depth: usize, params: RegularizationParams },
    Stochastic { depth: usize, alpha: f64, n_samples: usize, seed: u64 },
}

#[derive(Debug, Clone)]
struct Retriever {
    spec: RetrieverSpec,
    bm25: Bm25Params,
    rerank: Rerank,
}

fn compile(spec: &RetrieverSpec) -> Result<Retriever> {
    let allowed = spec.allowed_params();
    if let Some(bad) = spec.params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::Config {
            field: format!("pool.{}.params.{bad}", spec.id),
            message: format!("unknown parameter (allowed: {})", allowed.join(", ")),
        });
    }
    if spec.base == Base::None && spec.reranker != Reranker::None {
        return Err(Error::Config {
            field: format!("pool.{}.reranker", spec.id),
            message: "the no-retrieval option cannot be reranked".into(),
        });
    }
    let bm25 = Bm25Params {
        k1: spec.param("k1", 1.2),
        b: spec.param("b", 0.75),
    };
    let rerank = match spec.reranker {
        Reranker::None => Rerank::None,
        Reranker::Regularize => Rerank::Regularize {
            depth: spec.count_param("depth", DEFAULT_RERANK_DEPTH, 1)?,
            params: RegularizationParams {
                m: spec.count_param("m", RegularizationParams::default().m, 1)?,
                t: spec.count_param("t", RegularizationParams::default().t, 0)?,
            },
        },
        Reranker::Stochastic => {
            let alpha = spec.param("alpha", StochasticParams::default().alpha);
            if !(alpha > 0.0) {
                return Err(Error::Config {
                    field: format!("pool.{}.params.alpha", spec.id),
                    message: "alpha must be > 0".into(),
                });
            }
            Rerank::Stochastic {
                depth: spec.count_param("depth", DEFAULT_RERANK_DEPTH, 1)?,
                alpha,
                n_samples: spec.count_param("n_samples", StochasticParams::default().n_samples, 1)?,
                seed: spec.count_param("seed", 0, 0)? as u64,
            }
        }
    };
    Ok(Retriever {
        spec: spec.clone(),
        bm25,
        rerank,
    })
}

/// A corpus with its indexes and a set of retrieval options over it.
pub struct RetrieverPool {
    docs: Vec<CorpusRecord>,
    doc_pos: HashMap<String, usize>,
    bm25: Bm25Index,
    table: EmbeddingTable,
    doc_vectors: Vec<Vec<f64>>,
    provider: Box<dyn EmbeddingProvider>,
    retrievers: Vec<Retriever>,
}

impl std::fmt::Debug for RetrieverPool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RetrieverPool")
            .field("docs", &self.docs.len())
            .field("retrievers", &self.ids())
            .finish()
    }
}

/// Validates `specs` and builds the indexes they need over `docs`.
pub fn make_retriever_pool(
    specs: &[RetrieverSpec],
    docs: Vec<CorpusRecord>,
    provider: Box<dyn EmbeddingProvider>,
) -> Result<RetrieverPool> {
    if specs.is_empty() {
        return Err(Error::invalid("retriever pool needs at least one spec"));
    }
    let mut ids = HashSet::new();
    for s in specs {
        if !ids.insert(s.id.as_str()) {
            return Err(Error::DuplicateId(s.id.clone()));
        }
    }
    if specs.iter().filter(|s| s.base == Base::None).count() > 1 {
        return Err(Error::invalid("at most one no-retrieval option is allowed"));
    }
    let retrievers = specs.iter().map(compile).collect::<Result<Vec<_>>>()?;

    crate::corpus::check_records(&docs)?;
    if let Some(d) = docs.iter().find(|d| tokenize(&d.text).is_empty()) {
        return Err(Error::InvalidRecord {
            id: d.id.clone(),
            message: "document text has no tokens".into(),
        });
    }
    let bm25 = Bm25Index::build(&docs)?;
    let table = EmbeddingTable::build(&docs, provider.as_ref())?;
    let doc_vectors = table.iter().map(|(_, v)| v.to_vec()).collect();
    let doc_pos = docs.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
    Ok(RetrieverPool {
        docs,
        doc_pos,
        bm25,
        table,
        doc_vectors,
        provider,
        retrievers,
    })
}

impl RetrieverPool {
    /// Option ids in configuration order.
    pub fn ids(&self) -> Vec<&str> {
        self.retrievers.iter().map(|r| r.spec.id.as_str()).collect()
    }

    pub fn specs(&self) -> impl Iterator<Item = &RetrieverSpec> {
        self.retrievers.iter().map(|r| &r.spec)
    }

    pub fn len(&self) -> usize {
        self.retrievers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.retrievers.is_empty()
    }

    pub fn no_retrieval_id(&self) -> Option<&str> {
        self.retrievers
            .iter()
            .find(|r| r.spec.base == Base::None)
            .map(|r| r.spec.id.as_str())
    }

    pub fn bm25_index(&self) -> &Bm25Index {
        &self.bm25
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn doc_text(&self, id: &str) -> Option<&str> {
        self.doc_pos.get(id).map(|&i| self.docs[i].text.as_str())
    }

    pub fn doc_embedding(&self, id: &str) -> Option<&[f64]> {
        self.doc_pos.get(id).map(|&i| self.doc_vectors[i].as_slice())
    }

    pub fn embed_query(&self, query_id: &str, text: &str) -> Result<EmbeddingVector> {
        self.provider.embed(query_id, text)
    }

    pub fn embedding_dim(&self) -> usize {
        self.provider.dim()
    }

    /// Runs one option. The no-retrieval option returns an empty list.
    pub fn retrieve(&self, retriever_id: &str, query_id: &str, text: &str, k: usize) -> Result<RankedList> {
        if k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        let r = self
            .retrievers
            .iter()
            .find(|r| r.spec.id == retriever_id)
            .ok_or_else(|| Error::Unknown {
                kind: "retriever",
                name: retriever_id.to_string(),
                supported: self.ids().join(", "),
            })?;
        let depth = match r.rerank {
            Rerank::None => k,
            Rerank::Regularize { depth, .. } | Rerank::Stochastic { depth, .. } => depth.max(k),
        };
        let candidates = match r.spec.base {
            Base::None => Vec::new(),
            Base::Bm25 => bm25_retrieve(&self.bm25, text, depth, r.bm25)?,
            Base::Dense => {
                let q = self.provider.embed(query_id, text)?;
                if q.unit {
                    dense_retrieve(&self.table, &q, depth)?
                } else {
                    Vec::new()
                }
            }
        };
        let items = if candidates.is_empty() {
            candidates
        } else {
            match &r.rerank {
                Rerank::None => candidates,
                Rerank::Regularize { params, .. } => {
                    let embs: Vec<Vec<f64>> = candidates
                        .iter()
                        .map(|c| self.doc_vectors[self.doc_pos[&c.doc_id]].clone())
                        .collect();
                    let scores: Vec<f64> = candidates.iter().map(|c| c.score).collect();
                    let reg = regularize_scores(&embs, &scores, *params)?;
                    let rescored = candidates
                        .into_iter()
                        .zip(reg.scores)
                        .map(|(c, score)| ScoredDoc { doc_id: c.doc_id, score })
                        .collect();
                    top_k(rescored, k)
                }
                Rerank::Stochastic { alpha, n_samples, seed, .. } => {
                    let scores: Vec<f64> = candidates.iter().map(|c| c.score).collect();
                    let perm = plackett_luce_rerank(
                        &scores,
                        StochasticParams {
                            alpha: *alpha,
                            n_samples: *n_samples,
                            seed: derive_seed(*seed, text),
                        },
                    )?;
                    // Sampled order carries reciprocal-rank scores.
                    perm.into_iter()
                        .take(k)
                        .enumerate()
                        .map(|(rank, i)| ScoredDoc {
                            doc_id: candidates[i].doc_id.clone(),
                            score: 1.0 / (rank as f64 + 1.0),
                        })
                        .collect()
                }
            }
        };
        Ok(RankedList {
            retriever_id: retriever_id.to_string(),
            items,
        })
    }

    /// Runs every option for one query, in pool order.
    pub fn retrieve_all(&self, query_id: &str, text: &str, k: usize) -> Result<Vec<RankedList>> {
        self.ids()
            .into_iter()
            .map(|id| self.retrieve(id, query_id, text, k))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::HashEmbedder;

    fn corpus() -> Vec<CorpusRecord> {
        [
            "paris is the capital of france",
            "berlin is the capital of germany",
            "the eiffel tower stands in paris",
            "rome hosts the colosseum",
            "madrid is the capital of spain",
            "france borders spain and germany",
        ]
        .iter()
        .enumerate()
        .map(|(i, t)| CorpusRecord { id: format!("d{i}"), text: t.to_string() })
        .collect()
    }

    fn pool(specs: &[RetrieverSpec]) -> Result<RetrieverPool> {
        make_retriever_pool(specs, corpus(), Box::new(HashEmbedder::new(32, 1).unwrap()))
    }

    #[test]
    fn default_pool_has_seven_options() {
        let p = pool(&default_pool_specs()).unwrap();
        assert_eq!(p.len(), 7);
        assert_eq!(p.no_retrieval_id(), Some("none"));
    }

    #[test]
    fn bases_only_pool() {
        let specs = vec![
            RetrieverSpec::new("bm25", Base::Bm25, Reranker::None),
            RetrieverSpec::new("dense", Base::Dense, Reranker::None),
        ];
        let p = pool(&specs).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.no_retrieval_id(), None);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let specs = vec![
            RetrieverSpec::new("bm25", Base::Bm25, Reranker::None),
            RetrieverSpec::new("bm25", Base::Dense, Reranker::None),
        ];
        assert!(matches!(pool(&specs), Err(Error::DuplicateId(id)) if id == "bm25"));
    }

    #[test]
    fn reranked_no_retrieval_rejected() {
        let specs = vec![RetrieverSpec::new("none", Base::None, Reranker::Stochastic)];
        assert!(pool(&specs).is_err());
    }

    #[test]
    fn unknown_base_rejected_at_parse() {
        let r: std::result::Result<RetrieverSpec, _> =
            serde_json::from_str(r#"{"id":"x","base":"splade"}"#);
        assert!(r.is_err());
    }

    #[test]
    fn unknown_param_rejected() {
        let mut s = RetrieverSpec::new("bm25", Base::Bm25, Reranker::None);
        s.params.insert("alpha".into(), 2.0);
        assert!(pool(&[s]).is_err());
    }

    #[test]
    fn lists_are_valid_and_repeatable() {
        let p = pool(&default_pool_specs()).unwrap();
        for id in p.ids() {
            let a = p.retrieve(id, "q1", "capital of france", 3).unwrap();
            let b = p.retrieve(id, "q1", "capital of france", 3).unwrap();
            assert_eq!(a, b);
            assert!(a.len() <= 3);
            let ids: HashSet<_> = a.doc_ids().collect();
            assert_eq!(ids.len(), a.len());
            assert!(a.items.windows(2).all(|w| w[0].score >= w[1].score));
            if id == "none" {
                assert!(a.is_empty());
            } else {
                assert!(!a.is_empty(), "{id}");
            }
        }
    }
}
