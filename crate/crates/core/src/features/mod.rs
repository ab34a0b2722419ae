//! Routing features: query-only (pre-retrieval) and per-retriever
//! (post-retrieval) signals, PCA reduction and no-retrieval imputation.

mod pca;
mod post;

use serde::{Deserialize, Serialize};

pub use pca::{pca_fit, pca_project, PcaModel};
pub use post::{
    cross_ret_sim, impute_no_retrieval, moran_coefficient, post_retrieval_sims, PostFeatures, SimStats,
    POST_FEATURE_NAMES,
};

use crate::error::{Error, Result};
use crate::linalg::{cosine, mean_vector, normalized};
use crate::retrieval::{EmbeddingVector, RankedList, RetrieverPool};
use crate::text::tokenize;

pub const DEFAULT_PCA_DIM: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryForm {
    Keyword,
    NaturalLanguage,
}

impl QueryForm {
    pub fn flag(self) -> f64 {
        match self {
            QueryForm::Keyword => 0.0,
            QueryForm::NaturalLanguage => 1.0,
        }
    }
}

/// Decides whether a query is keyword-style or natural language.
pub trait QueryClassifier: Send + Sync {
    fn classify(&self, text: &str) -> QueryForm;
}

const LEAD_WORDS: [&str; 12] = [
    "what", "who", "when", "where", "why", "how", "which", "is", "are", "do", "does", "can",
];
const FUNCTION_WORDS: [&str; 5] = ["the", "a", "of", "in", "to"];

/// Lexical rule: interrogative lead word, trailing `?`, or a function word.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicClassifier;

impl QueryClassifier for HeuristicClassifier {
    fn classify(&self, text: &str) -> QueryForm {
        classify_query_type(text)
    }
}

pub fn classify_query_type(text: &str) -> QueryForm {
    let tokens = tokenize(text);
    let Some(first) = tokens.first() else {
        return QueryForm::Keyword;
    };
    let lead = LEAD_WORDS.contains(&first.as_str());
    let question_mark = text.trim_end().ends_with('?');
    let function_word = tokens.iter().any(|t| FUNCTION_WORDS.contains(&t.as_str()));
    if lead || question_mark || function_word {
        QueryForm::NaturalLanguage
    } else {
        QueryForm::Keyword
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreFeatures {
    pub query_embedding: Vec<f64>,
    pub query_length: usize,
    pub query_form: QueryForm,
}

impl PreFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.query_embedding.clone();
        v.push(self.query_length as f64);
        v.push(self.query_form.flag());
        v
    }
}

pub fn pre_features(
    pca: &PcaModel,
    query_embedding: &EmbeddingVector,
    text: &str,
    classifier: &dyn QueryClassifier,
) -> Result<PreFeatures> {
    Ok(PreFeatures {
        query_embedding: pca.project(&query_embedding.values)?,
        query_length: tokenize(text).len(),
        query_form: classifier.classify(text),
    })
}

/// Features of one (query, retriever) option. `post` is `None` for the
/// no-retrieval option and for retrievers that returned nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub query_id: String,
    pub retriever_id: String,
    pub pre: Vec<f64>,
    pub post: Option<Vec<f64>>,
}

impl FeatureVector {
    pub fn len_with_post(&self) -> usize {
        self.pre.len() + PostFeatures::LEN
    }

    /// Concatenated vector, filling a missing post block with `fill`.
    pub fn dense(&self, fill: &[f64]) -> Vec<f64> {
        let mut v = self.pre.clone();
        v.extend_from_slice(self.post.as_deref().unwrap_or(fill));
        v
    }
}

/// Computes features for every option of one query.
///
/// `lists` must be in pool order, one per option. CrossRetSim compares only
/// result sets that returned documents.
pub fn extract_query_features(
    pool: &RetrieverPool,
    pca: &PcaModel,
    classifier: &dyn QueryClassifier,
    query_id: &str,
    text: &str,
    lists: &[RankedList],
) -> Result<Vec<FeatureVector>> {
    let q = pool.embed_query(query_id, text)?;
    let pre = pre_features(pca, &q, text, classifier)?.to_vec();

    let doc_embs: Vec<Vec<&[f64]>> = lists
        .iter()
        .map(|l| {
            l.doc_ids()
                .map(|id| {
                    pool.doc_embedding(id).ok_or_else(|| Error::InvalidRecord {
                        id: id.to_string(),
                        message: "retrieved document missing from corpus".into(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let aggregates: Vec<Option<Vec<f64>>> = doc_embs
        .iter()
        .map(|docs| {
            if docs.is_empty() {
                None
            } else {
                normalized(&mean_vector(docs.iter().copied(), q.dim()))
            }
        })
        .collect();
    let present: Vec<Vec<f64>> = aggregates.iter().flatten().cloned().collect();

    let mut out = Vec::with_capacity(lists.len());
    let mut slot = 0;
    for ((list, docs), agg) in lists.iter().zip(&doc_embs).zip(&aggregates) {
        let post = match agg {
            Some(_) if q.unit => {
                let stats = post_retrieval_sims(&q, docs)?;
                let scores: Vec<f64> = docs.iter().map(|d| cosine(&q.values, d)).collect();
                let moran = if docs.len() >= 2 {
                    moran_coefficient(&scores, docs)?
                } else {
                    0.0
                };
                let cross = if present.len() >= 2 {
                    cross_ret_sim(&present, slot)?
                } else {
                    0.0
                };
                let pf = PostFeatures {
                    overall_sim: stats.overall_sim,
                    avg_sim: stats.avg_sim,
                    max_sim: stats.max_sim,
                    var_sim: stats.var_sim,
                    moran,
                    cross_ret_sim: cross,
                };
                pf.validate()?;
                Some(pf.to_vec())
            }
            _ => None,
        };
        if agg.is_some() {
            slot += 1;
        }
        out.push(FeatureVector {
            query_id: query_id.to_string(),
            retriever_id: list.retriever_id.clone(),
            pre: pre.clone(),
            post,
        });
    }
    Ok(out)
}

/// Medians of the post blocks present in `rows`.
pub fn training_medians<'a>(rows: impl IntoIterator<Item = &'a FeatureVector>) -> Result<Vec<f64>> {
    let posts = rows
        .into_iter()
        .filter_map(|r| r.post.as_deref())
        .map(PostFeatures::from_slice)
        .collect::<Result<Vec<_>>>()?;
    Ok(impute_no_retrieval(&posts)?.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusRecord;
    use crate::retrieval::{default_pool_specs, make_retriever_pool, HashEmbedder};

    #[test]
    fn classifier_examples() {
        assert_eq!(classify_query_type("what is the capital of france?"), QueryForm::NaturalLanguage);
        assert_eq!(classify_query_type("capital france population"), QueryForm::Keyword);
        assert_eq!(classify_query_type(""), QueryForm::Keyword);
        assert_eq!(classify_query_type("can dogs swim"), QueryForm::NaturalLanguage);
        assert_eq!(classify_query_type("history of rome"), QueryForm::NaturalLanguage);
    }

    #[test]
    fn imputation_leaves_pre_block_alone() {
        let fv = FeatureVector {
            query_id: "q".into(),
            retriever_id: "none".into(),
            pre: vec![0.1, 0.2, 3.0, 1.0],
            post: None,
        };
        let dense = fv.dense(&[9.0; 6]);
        assert_eq!(&dense[..4], fv.pre.as_slice());
        assert_eq!(&dense[4..], &[9.0; 6]);
    }

    #[test]
    fn extraction_has_fixed_length_and_valid_ranges() {
        let docs: Vec<CorpusRecord> = (0..30)
            .map(|i| CorpusRecord {
                id: format!("d{i}"),
                text: format!("topic{} shared words sample{} text {}", i % 4, i % 7, i),
            })
            .collect();
        let pool = make_retriever_pool(
            &default_pool_specs(),
            docs,
            Box::new(HashEmbedder::new(32, 9).unwrap()),
        )
        .unwrap();
        let queries = ["topic1 shared", "what about sample3 text", "topic2"];
        let embs: Vec<Vec<f64>> = queries
            .iter()
            .map(|t| pool.embed_query("q", t).unwrap().values)
            .collect();
        let pca = pca_fit(&embs, 2, 0).unwrap();
        for (i, text) in queries.iter().enumerate() {
            let qid = format!("q{i}");
            let lists = pool.retrieve_all(&qid, text, 5).unwrap();
            let fvs = extract_query_features(&pool, &pca, &HeuristicClassifier, &qid, text, &lists).unwrap();
            assert_eq!(fvs.len(), 7);
            for fv in &fvs {
                assert_eq!(fv.len_with_post(), 2 + 2 + 6);
                if fv.retriever_id == "none" {
                    assert!(fv.post.is_none());
                } else if let Some(p) = &fv.post {
                    PostFeatures::from_slice(p).unwrap().validate().unwrap();
                }
            }
            let again = extract_query_features(&pool, &pca, &HeuristicClassifier, &qid, text, &lists).unwrap();
            assert_eq!(fvs, again);
        }
    }
}
