//! Browser bindings: score regularization, Plackett-Luce sampling and a
//! small routing demo over a generated corpus.
//!
//! Every export takes plain numbers or strings and returns a JSON string.

use std::cell::RefCell;
use std::collections::HashMap;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use ltrr_core::eval::{route_learned, route_train_free, Heuristic};
use ltrr_core::features::{extract_query_features, pca_fit, FeatureVector, HeuristicClassifier, PcaModel};
use ltrr_core::labels::{build_label_matrix, SimulatedGenerator, UtilityMetric};
use ltrr_core::rerank::{
    plackett_luce_rerank, plackett_luce_weights, regularize_scores, RegularizationParams, StochasticParams,
};
use ltrr_core::retrieval::{default_pool_specs, make_retriever_pool, HashEmbedder, RetrieverPool};
use ltrr_core::synth::demo_data;
use ltrr_core::train::{score_retrievers, train, Algo, ModelMeta, RouterModel, TrainConfig, TrainingSet};

const SEED: u64 = 7;
const K: usize = 5;
const PCA_DIM: usize = 16;

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct RegularizeOut {
    scores: Vec<f64>,
    order: Vec<usize>,
    fallback_rows: Vec<usize>,
}

/// `embeddings` is row-major, `scores.len()` rows of `dim` values.
pub fn regularize_json(scores: &[f64], embeddings: &[f64], dim: usize, m: usize, t: usize) -> Result<String, String> {
    if dim == 0 || embeddings.len() != scores.len() * dim {
        return Err(format!(
            "expected {} embedding values for {} documents of dimension {dim}",
            scores.len() * dim,
            scores.len()
        ));
    }
    let docs: Vec<Vec<f64>> = embeddings
        .chunks(dim)
        .map(|row| {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.iter().map(|x| if n > 0.0 { x / n } else { 0.0 }).collect()
        })
        .collect();
    let r = regularize_scores(&docs, scores, RegularizationParams { m, t }).map_err(|e| e.to_string())?;
    let mut order: Vec<usize> = (0..r.scores.len()).collect();
    order.sort_by(|&a, &b| r.scores[b].total_cmp(&r.scores[a]).then(a.cmp(&b)));
    to_json(&RegularizeOut {
        scores: r.scores,
        order,
        fallback_rows: r.fallback_rows,
    })
}

#[derive(Serialize)]
struct FrequencyOut {
    analytic: Vec<f64>,
    empirical: Vec<f64>,
}

/// First-position probabilities next to frequencies over `draws` seeds.
pub fn plackett_luce_json(scores: &[f64], alpha: f64, draws: usize, seed: u64) -> Result<String, String> {
    let w = plackett_luce_weights(scores, alpha).map_err(|e| e.to_string())?;
    let total: f64 = w.iter().sum();
    let mut counts = vec![0usize; scores.len()];
    for i in 0..draws as u64 {
        let params = StochasticParams {
            alpha,
            n_samples: 1,
            seed: seed.wrapping_add(i),
        };
        let ranking = plackett_luce_rerank(scores, params).map_err(|e| e.to_string())?;
        counts[ranking[0]] += 1;
    }
    to_json(&FrequencyOut {
        analytic: w.iter().map(|x| x / total).collect(),
        empirical: counts.iter().map(|&c| c as f64 / draws.max(1) as f64).collect(),
    })
}

/// Corpus, pool and a pairwise tree router trained on every demo query.
pub struct RoutingDemo {
    pool: RetrieverPool,
    pca: PcaModel,
    model: RouterModel,
    examples: Vec<(String, String)>,
}

impl RoutingDemo {
    pub fn build() -> Result<Self, String> {
        let err = |e: ltrr_core::Error| e.to_string();
        let data = demo_data(6, 12, 20, SEED);
        let embedder = HashEmbedder::new(64, SEED).map_err(err)?;
        let pool = make_retriever_pool(&default_pool_specs(), data.documents, Box::new(embedder)).map_err(err)?;
        let vectors = data
            .queries
            .iter()
            .map(|q| pool.embed_query(&q.id, &q.text).map(|e| e.values))
            .collect::<Result<Vec<_>, _>>()
            .map_err(err)?;
        let pca = pca_fit(&vectors, PCA_DIM, SEED).map_err(err)?;
        let mut features = Vec::new();
        for q in &data.queries {
            let lists = pool.retrieve_all(&q.id, &q.text, K).map_err(err)?;
            features.extend(extract_query_features(&pool, &pca, &HeuristicClassifier, &q.id, &q.text, &lists).map_err(err)?);
        }
        let oracle = SimulatedGenerator {
            metric: UtilityMetric::ContextRecall,
        };
        let labels = build_label_matrix(&data.queries, &pool, K, &oracle).map_err(err)?;
        let ids: Vec<String> = data.queries.iter().map(|q| q.id.clone()).collect();
        let no_ret = pool.no_retrieval_id().map(str::to_string);
        let set = TrainingSet::from_features(&features, &labels, &ids, no_ret).map_err(err)?;
        let cfg = TrainConfig {
            rounds: 50,
            ..TrainConfig::default()
        };
        let meta = ModelMeta {
            pca: Some(pca.clone()),
            config_fingerprint: "demo".into(),
        };
        let model = train(Algo::DEFAULT, &set, &cfg, meta).map_err(err)?.model;
        let examples = data
            .queries
            .iter()
            .step_by(7)
            .map(|q| (q.text.clone(), q.query_type.to_string()))
            .collect();
        Ok(RoutingDemo {
            pool,
            pca,
            model,
            examples,
        })
    }

    fn features(&self, text: &str) -> Result<Vec<FeatureVector>, String> {
        let lists = self.pool.retrieve_all("input", text, K).map_err(|e| e.to_string())?;
        extract_query_features(&self.pool, &self.pca, &HeuristicClassifier, "input", text, &lists)
            .map_err(|e| e.to_string())
    }

    pub fn route_json(&self, text: &str) -> Result<String, String> {
        #[derive(Serialize)]
        struct Option_ {
            id: String,
            score: f64,
            post: Option<Vec<f64>>,
            docs: Vec<String>,
        }
        #[derive(Serialize)]
        struct Out {
            chosen: String,
            ranking: Vec<String>,
            options: Vec<Option_>,
            heuristics: HashMap<String, String>,
        }
        if text.trim().is_empty() {
            return Err("type a query first".into());
        }
        let fv = self.features(text)?;
        let scores = score_retrievers(&self.model, &fv).map_err(|e| e.to_string())?;
        let decision = route_learned(&self.model, "input", &fv).map_err(|e| e.to_string())?;
        let no_ret = self.pool.no_retrieval_id();
        let mut heuristics = HashMap::new();
        for h in Heuristic::ALL {
            let d = route_train_free(h, "input", &fv, no_ret).map_err(|e| e.to_string())?;
            heuristics.insert(h.to_string(), d.chosen_retriever_id);
        }
        let lists = self.pool.retrieve_all("input", text, K).map_err(|e| e.to_string())?;
        let options = fv
            .into_iter()
            .zip(scores)
            .zip(lists)
            .map(|((f, score), list)| Option_ {
                id: f.retriever_id,
                score,
                post: f.post,
                docs: list.doc_ids().map(str::to_string).collect(),
            })
            .collect();
        to_json(&Out {
            chosen: decision.chosen_retriever_id,
            ranking: decision.ranked_retriever_ids,
            options,
            heuristics,
        })
    }

    pub fn examples_json(&self) -> Result<String, String> {
        to_json(&self.examples)
    }

    pub fn document(&self, id: &str) -> Option<&str> {
        self.pool.doc_text(id)
    }
}

thread_local! {
    static DEMO: RefCell<Option<RoutingDemo>> = const { RefCell::new(None) };
}

fn with_demo<T>(f: impl FnOnce(&RoutingDemo) -> Result<T, String>) -> Result<T, JsError> {
    DEMO.with(|cell| {
        let mut slot = cell.borrow_mut();
        if slot.is_none() {
            *slot = Some(RoutingDemo::build().map_err(|e| JsError::new(&e))?);
        }
        f(slot.as_ref().expect("demo built above")).map_err(|e| JsError::new(&e))
    })
}

#[wasm_bindgen]
pub fn regularize(scores: Vec<f64>, embeddings: Vec<f64>, dim: usize, m: usize, t: usize) -> Result<String, JsError> {
    regularize_json(&scores, &embeddings, dim, m, t).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn plackett_luce(scores: Vec<f64>, alpha: f64, draws: usize, seed: u64) -> Result<String, JsError> {
    plackett_luce_json(&scores, alpha, draws, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn route(text: &str) -> Result<String, JsError> {
    with_demo(|d| d.route_json(text))
}

#[wasm_bindgen]
pub fn example_queries() -> Result<String, JsError> {
    with_demo(|d| d.examples_json())
}

#[wasm_bindgen]
pub fn document_text(id: &str) -> Result<String, JsError> {
    with_demo(|d| d.document(id).map(str::to_string).ok_or_else(|| format!("no document {id}")))
}
