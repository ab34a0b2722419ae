//! Synthetic data: a heterogeneous routing fixture with planted per-family
//! best retrievers, and a small text corpus for end-to-end runs.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{CorpusRecord, QueryRecord, QueryType};
use crate::error::{Error, Result};
use crate::features::{pca_fit, FeatureVector, PcaModel, PostFeatures, QueryForm};
use crate::labels::{LabelMatrix, LabelRow};
use crate::linalg::normalized;
use crate::retrieval::default_pool_specs;
use crate::text::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureParams {
    pub queries_per_family: usize,
    pub embedding_dim: usize,
    /// Spread of per-query utilities around the family means.
    pub utility_noise: f64,
    /// Noise on the post-retrieval signals.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        FixtureParams {
            queries_per_family: 60,
            embedding_dim: 48,
            utility_noise: 0.1,
            feature_noise: 0.2,
            seed: 0,
        }
    }
}

/// The five query families, one per query type.
pub const FAMILIES: [QueryType; 5] = [
    QueryType::Factoid,
    QueryType::MultiAspect,
    QueryType::Comparison,
    QueryType::Complex,
    QueryType::OpenEnded,
];

#[derive(Debug, Clone)]
pub struct SyntheticQuery {
    pub record: QueryRecord,
    pub family: usize,
    pub embedding: Vec<f64>,
    pub length: usize,
    pub form: QueryForm,
    /// Post block per pool option; `None` for no retrieval.
    pub posts: Vec<Option<Vec<f64>>>,
}

/// Queries from five families over the default seven-option pool. Every
/// family has a different best option (one family is best served without
/// retrieval), pre-retrieval embeddings cluster by family, and post-retrieval
/// signals are noisy functions of the option's utility.
#[derive(Debug, Clone)]
pub struct RoutingFixture {
    pub pool_ids: Vec<String>,
    pub no_retrieval_id: String,
    pub queries: Vec<SyntheticQuery>,
    pub labels: LabelMatrix,
    /// Best option per family.
    pub best: Vec<String>,
    /// Mean utility per family and option, in pool order.
    pub theta: Vec<Vec<f64>>,
}

fn post_block(u: f64, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let q = u + noise * n.sample(rng);
    let max_sim = (0.35 + 0.5 * q).clamp(-1.0, 1.0);
    let avg_sim = (max_sim - 0.15 + 0.05 * n.sample(rng)).clamp(-1.0, max_sim);
    let overall_sim = (avg_sim + 0.05 + 0.03 * n.sample(rng)).clamp(-1.0, 1.0);
    let var_sim = 0.02 * (1.2 - q).max(0.01) * (0.1 * n.sample(rng)).exp();
    let moran = (0.6 * q - 0.1 + 0.1 * n.sample(rng)).clamp(-1.0, 1.0);
    let cross = (0.5 + 0.1 * n.sample(rng)).clamp(-1.0, 1.0);
    PostFeatures {
        overall_sim,
        avg_sim,
        max_sim,
        var_sim,
        moran,
        cross_ret_sim: cross,
    }
    .to_vec()
}

impl RoutingFixture {
    pub fn generate(params: &FixtureParams) -> Result<Self> {
        if params.queries_per_family == 0 || params.embedding_dim < 8 {
            return Err(Error::invalid("fixture needs queries and an embedding dim >= 8"));
        }
        let specs = default_pool_specs();
        let pool_ids: Vec<String> = specs.iter().map(|s| s.id.clone()).collect();
        let no_ret = pool_ids.len() - 1;
        let no_retrieval_id = pool_ids[no_ret].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, "fixture"));
        let unit = Normal::new(0.0, 1.0).expect("unit normal");

        let mut standard: Vec<usize> = (0..no_ret).collect();
        standard.shuffle(&mut rng);
        let mut best_idx: Vec<usize> = standard[..FAMILIES.len() - 1].to_vec();
        best_idx.push(no_ret);
        best_idx.shuffle(&mut rng);

        let theta: Vec<Vec<f64>> = best_idx
            .iter()
            .map(|&b| {
                (0..pool_ids.len())
                    .map(|r| {
                        if r == b {
                            if r == no_ret {
                                0.75
                            } else {
                                0.8
                            }
                        } else if r == no_ret {
                            rng.random_range(0.2..0.4)
                        } else {
                            rng.random_range(0.3..0.5)
                        }
                    })
                    .collect()
            })
            .collect();

        let dim = params.embedding_dim;
        let centroids: Vec<Vec<f64>> = (0..FAMILIES.len())
            .map(|_| {
                let raw: Vec<f64> = (0..dim).map(|_| unit.sample(&mut rng)).collect();
                normalized(&raw).expect("non-zero centroid")
            })
            .collect();
        let base_len = [3usize, 9, 7, 12, 6];

        let mut queries = Vec::new();
        let mut rows = Vec::new();
        for i in 0..params.queries_per_family {
            for (f, qtype) in FAMILIES.iter().enumerate() {
                let id = format!("{}-{i:03}", qtype.as_str());
                let raw: Vec<f64> = centroids[f]
                    .iter()
                    .map(|c| c + 0.6 * unit.sample(&mut rng) / (dim as f64).sqrt())
                    .collect();
                let embedding = normalized(&raw).expect("non-zero embedding");
                let length = base_len[f] + rng.random_range(0..3);
                let form = if f == 0 && rng.random_bool(0.8) {
                    QueryForm::Keyword
                } else {
                    QueryForm::NaturalLanguage
                };
                let utils: Vec<f64> = theta[f]
                    .iter()
                    .map(|t| (t + params.utility_noise * unit.sample(&mut rng)).clamp(0.0, 1.0))
                    .collect();
                let posts = utils
                    .iter()
                    .enumerate()
                    .map(|(r, &u)| (r != no_ret).then(|| post_block(u, params.feature_noise, &mut rng)))
                    .collect();
                let pairs: Vec<(String, f64)> = pool_ids.iter().cloned().zip(utils.iter().copied()).collect();
                rows.push(LabelRow::from_utilities(&id, &pairs, &no_retrieval_id)?);
                queries.push(SyntheticQuery {
                    record: QueryRecord {
                        id: id.clone(),
                        text: format!("{} query {i}", qtype.as_str()),
                        gold_answer: String::new(),
                        query_type: *qtype,
                        no_ret_utility: Some(utils[no_ret]),
                    },
                    family: f,
                    embedding,
                    length,
                    form,
                    posts,
                });
            }
        }
        Ok(RoutingFixture {
            best: best_idx.iter().map(|&b| pool_ids[b].clone()).collect(),
            labels: LabelMatrix {
                pool_ids: pool_ids.clone(),
                rows,
            },
            pool_ids,
            no_retrieval_id,
            queries,
            theta,
        })
    }

    pub fn query_records(&self) -> Vec<QueryRecord> {
        self.queries.iter().map(|q| q.record.clone()).collect()
    }

    /// PCA over the embeddings of `ids`.
    pub fn fit_pca(&self, ids: &[String], r: usize, seed: u64) -> Result<PcaModel> {
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        let vectors: Vec<Vec<f64>> = self
            .queries
            .iter()
            .filter(|q| wanted.contains(q.record.id.as_str()))
            .map(|q| q.embedding.clone())
            .collect();
        pca_fit(&vectors, r, seed)
    }

    /// Feature vectors of every option of every query, grouped by query id.
    pub fn features(&self, pca: &PcaModel) -> Result<HashMap<String, Vec<FeatureVector>>> {
        let mut out = HashMap::with_capacity(self.queries.len());
        for q in &self.queries {
            let mut pre = pca.project(&q.embedding)?;
            pre.push(q.length as f64);
            pre.push(q.form.flag());
            let fvs = self
                .pool_ids
                .iter()
                .zip(&q.posts)
                .map(|(rid, post)| FeatureVector {
                    query_id: q.record.id.clone(),
                    retriever_id: rid.clone(),
                    pre: pre.clone(),
                    post: post.clone(),
                })
                .collect();
            out.insert(q.record.id.clone(), fvs);
        }
        Ok(out)
    }

    /// Copy of the labels with zero-mean Gaussian noise of scale `sigma` on
    /// the utilities of `ids` (clamped to [0, 1]); gains are recomputed.
    pub fn noisy_labels(&self, ids: &[String], sigma: f64, seed: u64) -> Result<LabelMatrix> {
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "label-noise"));
        let rows = self
            .labels
            .rows
            .iter()
            .map(|row| {
                if !wanted.contains(row.query_id.as_str()) {
                    return Ok(row.clone());
                }
                let noisy: Vec<(String, f64)> = row
                    .cells
                    .iter()
                    .map(|c| (c.retriever_id.clone(), (c.utility + noise.sample(&mut rng)).clamp(0.0, 1.0)))
                    .collect();
                LabelRow::from_utilities(&row.query_id, &noisy, &self.no_retrieval_id)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LabelMatrix {
            pool_ids: self.labels.pool_ids.clone(),
            rows,
        })
    }
}

/// A small topical corpus with queries whose gold answers occur in the
/// documents of their topic.
#[derive(Debug, Clone)]
pub struct DemoData {
    pub documents: Vec<CorpusRecord>,
    pub queries: Vec<QueryRecord>,
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    const ONSETS: [&str; 14] = ["b", "k", "d", "f", "g", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let syllables = rng.random_range(2..4);
    (0..syllables)
        .map(|_| format!("{}{}", ONSETS[rng.random_range(0..ONSETS.len())], VOWELS[rng.random_range(0..5)]))
        .collect()
}

pub fn demo_data(topics: usize, docs_per_topic: usize, queries_per_topic: usize, seed: u64) -> DemoData {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "demo"));
    let shared: Vec<String> = (0..40).map(|_| pseudo_word(&mut rng)).collect();
    let vocab: Vec<Vec<String>> = (0..topics)
        .map(|_| (0..25).map(|_| pseudo_word(&mut rng)).collect())
        .collect();
    let mut documents = Vec::new();
    let mut topic_docs: Vec<Vec<Vec<String>>> = vec![Vec::new(); topics];
    for (t, words) in vocab.iter().enumerate() {
        for d in 0..docs_per_topic {
            let len = rng.random_range(12..24);
            let tokens: Vec<String> = (0..len)
                .map(|_| {
                    if rng.random_bool(0.7) {
                        words[rng.random_range(0..words.len())].clone()
                    } else {
                        shared[rng.random_range(0..shared.len())].clone()
                    }
                })
                .collect();
            documents.push(CorpusRecord {
                id: format!("t{t}-d{d:02}"),
                text: tokens.join(" "),
            });
            topic_docs[t].push(tokens);
        }
    }
    let mut queries = Vec::new();
    for (t, docs) in topic_docs.iter().enumerate() {
        for i in 0..queries_per_topic {
            let qtype = FAMILIES[(t + i) % FAMILIES.len()];
            let words = |rng: &mut ChaCha8Rng, doc: &[String], n: usize| -> Vec<String> {
                (0..n).map(|_| doc[rng.random_range(0..doc.len())].clone()).collect()
            };
            let a = &docs[rng.random_range(0..docs.len())];
            let b = &docs[rng.random_range(0..docs.len())];
            let (text, gold, no_ret) = match qtype {
                // Exact terms from one document; the answer sits in it.
                QueryType::Factoid => {
                    let n = rng.random_range(2..4);
                    (words(&mut rng, a, n).join(" "), words(&mut rng, a, 3), rng.random_range(0.0..0.3))
                }
                // Answer spread across several documents of the topic.
                QueryType::MultiAspect | QueryType::Complex => {
                    let topic = &vocab[t];
                    let q = words(&mut rng, topic, 3).join(" ");
                    let gold = (0..4)
                        .map(|_| {
                            let d = &docs[rng.random_range(0..docs.len())];
                            d[rng.random_range(0..d.len())].clone()
                        })
                        .collect();
                    (format!("what about {q}?"), gold, rng.random_range(0.0..0.3))
                }
                QueryType::Comparison => {
                    let x = words(&mut rng, a, 2);
                    let y = words(&mut rng, b, 2);
                    let mut gold = words(&mut rng, a, 2);
                    gold.extend(words(&mut rng, b, 2));
                    (
                        format!("how does {} compare to {}?", x.join(" "), y.join(" ")),
                        gold,
                        rng.random_range(0.0..0.3),
                    )
                }
                // Answerable without retrieval; the corpus does not help.
                _ => {
                    let other = &vocab[(t + 1) % topics.max(1)];
                    let q = words(&mut rng, &shared, 2).join(" ");
                    (format!("tell me about {q}"), words(&mut rng, other, 3), rng.random_range(0.5..0.9))
                }
            };
            queries.push(QueryRecord {
                id: format!("q{t}-{i:02}"),
                text,
                gold_answer: gold.join(" "),
                query_type: qtype,
                no_ret_utility: Some((no_ret * 100.0_f64).round() / 100.0),
            });
        }
    }
    DemoData { documents, queries }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_families_have_distinct_best_options() {
        let f = RoutingFixture::generate(&FixtureParams::default()).unwrap();
        let unique: HashSet<&String> = f.best.iter().collect();
        assert_eq!(unique.len(), FAMILIES.len());
        assert!(f.best.contains(&f.no_retrieval_id));
        assert_eq!(f.queries.len(), 300);
        assert_eq!(f.labels.rows.len(), 300);
        for q in &f.queries {
            for p in q.posts.iter().flatten() {
                PostFeatures::from_slice(p).unwrap().validate().unwrap();
            }
        }
    }

    #[test]
    fn fixture_is_seeded() {
        let a = RoutingFixture::generate(&FixtureParams { seed: 4, ..Default::default() }).unwrap();
        let b = RoutingFixture::generate(&FixtureParams { seed: 4, ..Default::default() }).unwrap();
        assert_eq!(a.labels, b.labels);
        let c = RoutingFixture::generate(&FixtureParams { seed: 5, ..Default::default() }).unwrap();
        assert_ne!(a.labels, c.labels);
    }

    #[test]
    fn demo_data_is_well_formed() {
        let d = demo_data(4, 6, 5, 1);
        assert_eq!(d.documents.len(), 24);
        assert_eq!(d.queries.len(), 20);
        crate::corpus::check_records(&d.documents).unwrap();
        crate::corpus::check_records(&d.queries).unwrap();
    }
}
