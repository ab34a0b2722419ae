//! Scoring-function trainers for ranking retrievers.
//!
//! Three loss families are supported: pointwise regression on normalized
//! utility gains, pairwise logistic loss over preference pairs, and the
//! ListNet top-one cross-entropy. Linear scorers (closed-form ridge or
//! gradient descent) and gradient-boosted regression trees back them.

mod gbrt;
mod linear;
mod model;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use gbrt::{Node, RegressionTree, TreeEnsembleScorer};
pub use linear::{listnet_loss, listwise_objective, LinearScorer, ObjectiveParams};
pub use model::{load_model, save_model, score_retrievers, RouterModel, MODEL_VERSION};

use crate::error::{Error, Result};
use crate::features::{training_medians, FeatureVector, PcaModel};
use crate::labels::{LabelMatrix, LabelRow};
use crate::text::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossFamily {
    Pointwise,
    Pairwise,
    Listwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Learner {
    Linear,
    Gbrt,
}

/// A supported (loss family, learner) combination, written `pairwise-gbrt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Algo {
    pub loss: LossFamily,
    pub learner: Learner,
}

impl Algo {
    pub const SUPPORTED: [Algo; 5] = [
        Algo { loss: LossFamily::Pointwise, learner: Learner::Linear },
        Algo { loss: LossFamily::Pointwise, learner: Learner::Gbrt },
        Algo { loss: LossFamily::Pairwise, learner: Learner::Linear },
        Algo { loss: LossFamily::Pairwise, learner: Learner::Gbrt },
        Algo { loss: LossFamily::Listwise, learner: Learner::Linear },
    ];

    pub const DEFAULT: Algo = Algo { loss: LossFamily::Pairwise, learner: Learner::Gbrt };

    /// Whether the no-retrieval post block is a trained parameter rather than
    /// the training medians.
    pub fn learns_no_retrieval_vector(self) -> bool {
        self.learner == Learner::Linear && self.loss != LossFamily::Pointwise
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let loss = match self.loss {
            LossFamily::Pointwise => "pointwise",
            LossFamily::Pairwise => "pairwise",
            LossFamily::Listwise => "listwise",
        };
        let learner = match self.learner {
            Learner::Linear => "linear",
            Learner::Gbrt => "gbrt",
        };
        write!(f, "{loss}-{learner}")
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::SUPPORTED
            .into_iter()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "algorithm",
                name: s.to_string(),
                supported: Algo::SUPPORTED.map(|a| a.to_string()).join(", "),
            })
    }
}

impl TryFrom<String> for Algo {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Algo> for String {
    fn from(a: Algo) -> String {
        a.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Gradient-descent epochs for linear pairwise/listwise learners.
    pub epochs: usize,
    /// Initial gradient-descent step size (backtracking halves it as needed).
    pub step_size: f64,
    /// L2 penalty on linear weights.
    pub ridge_lambda: f64,
    /// Boosting rounds.
    pub rounds: usize,
    /// Boosting shrinkage.
    pub learning_rate: f64,
    pub tree_depth: usize,
    /// L2 penalty on tree leaf values.
    pub tree_lambda: f64,
    pub min_child_weight: f64,
    /// Cap on preference pairs per query; `None` keeps all.
    pub max_pairs_per_query: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            step_size: 1.0,
            ridge_lambda: 1e-4,
            rounds: 100,
            learning_rate: 0.1,
            tree_depth: 3,
            tree_lambda: 1.0,
            min_child_weight: 0.1,
            max_pairs_per_query: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| {
            Err(Error::Config {
                field: format!("train.{field}"),
                message: message.to_string(),
            })
        };
        if !(self.step_size > 0.0) {
            return bad("step_size", "must be > 0");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be > 0");
        }
        if !(self.ridge_lambda >= 0.0) || !(self.tree_lambda >= 0.0) {
            return bad("ridge_lambda", "penalties must be >= 0");
        }
        if self.tree_depth == 0 {
            return bad("tree_depth", "must be >= 1");
        }
        if self.max_pairs_per_query == Some(0) {
            return bad("max_pairs_per_query", "must be >= 1");
        }
        Ok(())
    }
}

/// One retrieval option of a training query.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOption {
    pub retriever_id: String,
    pub pre: Vec<f64>,
    pub post: Option<Vec<f64>>,
    pub delta: f64,
    pub delta_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroup {
    pub query_id: String,
    pub options: Vec<TrainOption>,
}

/// Training queries with their per-option features and labels.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub groups: Vec<QueryGroup>,
    pub pool_ids: Vec<String>,
    pub no_retrieval_id: Option<String>,
    pub pre_len: usize,
    /// Medians of the observed post blocks, used for missing ones.
    pub medians: Vec<f64>,
}

impl TrainingSet {
    pub fn new(groups: Vec<QueryGroup>, pool_ids: Vec<String>, no_retrieval_id: Option<String>) -> Result<Self> {
        let first = groups
            .iter()
            .flat_map(|g| g.options.first())
            .next()
            .ok_or_else(|| Error::invalid("training set is empty"))?;
        let pre_len = first.pre.len();
        for o in groups.iter().flat_map(|g| &g.options) {
            if o.pre.len() != pre_len {
                return Err(Error::LengthMismatch { expected: pre_len, actual: o.pre.len() });
            }
            if let Some(p) = &o.post {
                if p.len() != crate::features::PostFeatures::LEN {
                    return Err(Error::LengthMismatch {
                        expected: crate::features::PostFeatures::LEN,
                        actual: p.len(),
                    });
                }
            }
        }
        let as_fv: Vec<FeatureVector> = groups
            .iter()
            .flat_map(|g| &g.options)
            .filter(|o| o.post.is_some())
            .map(|o| FeatureVector {
                query_id: String::new(),
                retriever_id: o.retriever_id.clone(),
                pre: Vec::new(),
                post: o.post.clone(),
            })
            .collect();
        let medians = training_medians(&as_fv)?;
        Ok(TrainingSet {
            groups,
            pool_ids,
            no_retrieval_id,
            pre_len,
            medians,
        })
    }

    /// Joins features and labels for `query_ids`. Flagged label rows and
    /// queries lacking features are skipped.
    pub fn from_features(
        features: &[FeatureVector],
        labels: &LabelMatrix,
        query_ids: &[String],
        no_retrieval_id: Option<String>,
    ) -> Result<Self> {
        let mut by_query: HashMap<&str, Vec<&FeatureVector>> = HashMap::new();
        for f in features {
            by_query.entry(f.query_id.as_str()).or_default().push(f);
        }
        let rows = labels.index();
        let mut groups = Vec::new();
        for qid in query_ids {
            let Some(row) = rows.get(qid.as_str()) else { continue };
            if row.flagged {
                log::warn!("skipping flagged query {qid}");
                continue;
            }
            let Some(fvs) = by_query.get(qid.as_str()) else {
                log::warn!("no features for query {qid}");
                continue;
            };
            let options = labels
                .pool_ids
                .iter()
                .map(|rid| {
                    let cell = row.cell(rid).ok_or_else(|| Error::invalid(format!("{qid}: missing label for {rid}")))?;
                    let fv = fvs
                        .iter()
                        .find(|f| &f.retriever_id == rid)
                        .ok_or_else(|| Error::invalid(format!("{qid}: missing features for {rid}")))?;
                    Ok(TrainOption {
                        retriever_id: rid.clone(),
                        pre: fv.pre.clone(),
                        post: fv.post.clone(),
                        delta: cell.delta,
                        delta_norm: cell.delta_norm,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            groups.push(QueryGroup { query_id: qid.clone(), options });
        }
        Self::new(groups, labels.pool_ids.clone(), no_retrieval_id)
    }

    pub fn feature_len(&self) -> usize {
        self.pre_len + crate::features::PostFeatures::LEN
    }

    pub fn is_no_retrieval(&self, retriever_id: &str) -> bool {
        self.no_retrieval_id.as_deref() == Some(retriever_id)
    }
}

/// Ordered preference pairs `(winner, loser)` with strictly larger gain.
pub fn build_pairs(row: &LabelRow) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    for w in &row.cells {
        for l in &row.cells {
            if w.delta > l.delta {
                pairs.push((w.retriever_id.clone(), l.retriever_id.clone()));
            }
        }
    }
    pairs
}

/// Index pairs within one group, optionally capped by seeded sampling.
pub(crate) fn group_pairs(group: &QueryGroup, cap: Option<usize>, seed: u64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, w) in group.options.iter().enumerate() {
        for (j, l) in group.options.iter().enumerate() {
            if w.delta > l.delta {
                pairs.push((i, j));
            }
        }
    }
    if let Some(cap) = cap {
        if pairs.len() > cap {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &group.query_id));
            pairs.shuffle(&mut rng);
            pairs.truncate(cap);
            pairs.sort_unstable();
        }
    }
    pairs
}

/// Metadata stored alongside a trained scorer.
#[derive(Debug, Clone, Default)]
pub struct ModelMeta {
    pub pca: Option<PcaModel>,
    pub config_fingerprint: String,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: RouterModel,
    /// Training objective after each epoch or boosting round, starting with
    /// the initial model.
    pub loss_history: Vec<f64>,
}

pub fn train(algo: Algo, data: &TrainingSet, cfg: &TrainConfig, meta: ModelMeta) -> Result<Trained> {
    cfg.validate()?;
    match algo.loss {
        LossFamily::Pointwise => train_pointwise(data, algo.learner, cfg, meta),
        LossFamily::Pairwise => train_pairwise(data, algo.learner, cfg, meta),
        LossFamily::Listwise => train_listwise(data, cfg, meta),
    }
}

fn wrap(algo: Algo, data: &TrainingSet, meta: ModelMeta, scorer: model::Scorer, noret: Option<Vec<f64>>) -> RouterModel {
    RouterModel {
        version: MODEL_VERSION,
        algo,
        scorer,
        feature_len: data.feature_len(),
        medians: data.medians.clone(),
        noret_vector: noret,
        no_retrieval_id: data.no_retrieval_id.clone(),
        pool_ids: data.pool_ids.clone(),
        pca: meta.pca,
        config_fingerprint: meta.config_fingerprint,
    }
}

/// Squared-loss regression on `delta_norm`.
pub fn train_pointwise(data: &TrainingSet, learner: Learner, cfg: &TrainConfig, meta: ModelMeta) -> Result<Trained> {
    let algo = Algo { loss: LossFamily::Pointwise, learner };
    let (x, y) = linear::dense_rows(data);
    if x.is_empty() {
        return Err(Error::invalid("pointwise training needs at least one row"));
    }
    let (scorer, history) = match learner {
        Learner::Linear => {
            let (lin, loss) = linear::fit_ridge(&x, &y, cfg.ridge_lambda)?;
            (model::Scorer::Linear(lin), vec![loss])
        }
        Learner::Gbrt => {
            let (ens, hist) = gbrt::boost_squared(&x, &y, cfg);
            (model::Scorer::Trees(ens), hist)
        }
    };
    Ok(Trained {
        model: wrap(algo, data, meta, scorer, None),
        loss_history: history,
    })
}

/// Logistic pairwise loss `log(1 + exp(-(f(winner) - f(loser))))`.
pub fn train_pairwise(data: &TrainingSet, learner: Learner, cfg: &TrainConfig, meta: ModelMeta) -> Result<Trained> {
    let algo = Algo { loss: LossFamily::Pairwise, learner };
    let pairs: Vec<Vec<(usize, usize)>> = data
        .groups
        .iter()
        .map(|g| group_pairs(g, cfg.max_pairs_per_query, cfg.seed))
        .collect();
    if pairs.iter().all(Vec::is_empty) {
        return Err(Error::invalid("pairwise training found no preference pairs (all gains tied)"));
    }
    match learner {
        Learner::Linear => {
            let (lin, noret, hist) = linear::fit_gradient(data, linear::Objective::Pairwise(&pairs), cfg)?;
            Ok(Trained {
                model: wrap(algo, data, meta, model::Scorer::Linear(lin), noret),
                loss_history: hist,
            })
        }
        Learner::Gbrt => {
            let (x, _) = linear::dense_rows(data);
            let (ens, hist) = gbrt::boost_pairwise(&x, data, &pairs, cfg);
            Ok(Trained {
                model: wrap(algo, data, meta, model::Scorer::Trees(ens), None),
                loss_history: hist,
            })
        }
    }
}

/// ListNet top-one cross-entropy between `softmax(delta_norm)` and
/// `softmax(scores)`, linear scorer only.
pub fn train_listwise(data: &TrainingSet, cfg: &TrainConfig, meta: ModelMeta) -> Result<Trained> {
    let algo = Algo { loss: LossFamily::Listwise, learner: Learner::Linear };
    let (lin, noret, hist) = linear::fit_gradient(data, linear::Objective::Listwise, cfg)?;
    Ok(Trained {
        model: wrap(algo, data, meta, model::Scorer::Linear(lin), noret),
        loss_history: hist,
    })
}


#[cfg(test)]
mod fit_tests;
