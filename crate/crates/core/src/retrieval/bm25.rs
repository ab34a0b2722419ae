use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{top_k, RankedList, ScoredDoc};
use crate::corpus::CorpusRecord;
use crate::error::{Error, Result};
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone)]
struct Posting {
    doc: usize,
    tf: u32,
}

/// In-memory inverted index.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    doc_ids: Vec<String>,
    doc_len: Vec<u32>,
    avg_len: f64,
    postings: HashMap<String, Vec<Posting>>,
}

impl Bm25Index {
    pub fn build(docs: &[CorpusRecord]) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::invalid("cannot index an empty corpus"));
        }
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(docs.len());
        for (idx, d) in docs.iter().enumerate() {
            let tokens = tokenize(&d.text);
            doc_len.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, tf) in tf {
                postings.entry(term).or_default().push(Posting { doc: idx, tf });
            }
        }
        let avg_len = doc_len.iter().map(|&l| f64::from(l)).sum::<f64>() / docs.len() as f64;
        Ok(Bm25Index {
            doc_ids: docs.iter().map(|d| d.id.clone()).collect(),
            doc_len,
            avg_len,
            postings,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_len
    }

    /// Non-negative idf: `ln(1 + (N - df + 0.5) / (df + 0.5))`.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

/// Top-`k` documents by BM25. Documents with zero score are not returned, and
/// repeated query terms count once.
pub fn bm25_retrieve(
    index: &Bm25Index,
    query: &str,
    k: usize,
    params: Bm25Params,
) -> Result<Vec<ScoredDoc>> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let mut terms = tokenize(query);
    terms.sort();
    terms.dedup();

    let mut acc: HashMap<usize, f64> = HashMap::new();
    for term in &terms {
        let Some(plist) = index.postings.get(term) else {
            continue;
        };
        let idf = index.idf(term);
        for p in plist {
            let tf = f64::from(p.tf);
            let len_norm = 1.0 - params.b + params.b * f64::from(index.doc_len[p.doc]) / index.avg_len;
            *acc.entry(p.doc).or_default() += idf * tf * (params.k1 + 1.0) / (tf + params.k1 * len_norm);
        }
    }
    let scored = acc
        .into_iter()
        .filter(|(_, s)| *s > 0.0)
        .map(|(doc, score)| ScoredDoc {
            doc_id: index.doc_ids[doc].clone(),
            score,
        })
        .collect();
    Ok(top_k(scored, k))
}

impl Bm25Index {
    pub fn retrieve(&self, retriever_id: &str, query: &str, k: usize, params: Bm25Params) -> Result<RankedList> {
        Ok(RankedList {
            retriever_id: retriever_id.to_string(),
            items: bm25_retrieve(self, query, k, params)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> CorpusRecord {
        CorpusRecord { id: id.into(), text: text.into() }
    }

    fn tiny() -> Bm25Index {
        Bm25Index::build(&[doc("d1", "apple pie"), doc("d2", "banana")]).unwrap()
    }

    #[test]
    fn absent_term_gives_empty_list() {
        assert!(bm25_retrieve(&tiny(), "cherry", 5, Bm25Params::default()).unwrap().is_empty());
    }

    #[test]
    fn sole_match_ranks_first() {
        let hits = bm25_retrieve(&tiny(), "apple", 5, Bm25Params::default()).unwrap();
        assert_eq!(hits[0].doc_id, "d1");
        assert_eq!(hits.len(), 1);
    }

    #[test]
    fn score_matches_hand_evaluation() {
        // N = 2, df = 1: idf = ln(1 + 1.5 / 1.5) = ln 2.
        // tf = 1, |d1| = 2, avgdl = 1.5: 2.2 / (1 + 1.2 * (0.25 + 0.75 * 2 / 1.5)) = 0.88.
        let hits = bm25_retrieve(&tiny(), "apple", 5, Bm25Params { k1: 1.2, b: 0.75 }).unwrap();
        let expected = 0.88 * std::f64::consts::LN_2;
        assert!((hits[0].score - expected).abs() < 1e-12, "{}", hits[0].score);
    }

    #[test]
    fn zero_k_is_rejected() {
        assert!(bm25_retrieve(&tiny(), "apple", 0, Bm25Params::default()).is_err());
    }

    #[test]
    fn punctuation_only_query_is_empty() {
        assert!(bm25_retrieve(&tiny(), "?!", 3, Bm25Params::default()).unwrap().is_empty());
    }

    #[test]
    fn ties_break_by_doc_id() {
        let idx = Bm25Index::build(&[doc("b", "x y"), doc("a", "x y"), doc("c", "z")]).unwrap();
        let hits = bm25_retrieve(&idx, "x", 5, Bm25Params::default()).unwrap();
        assert_eq!(hits.iter().map(|h| h.doc_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
    }
}
