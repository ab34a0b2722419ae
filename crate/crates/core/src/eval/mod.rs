//! Routing policies, policy evaluation, significance tests and reports.

mod report;
mod stats;

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use report::{assess_split, render_report, EvalReport, PolicyKind, PolicyResult, RenderedReport, SplitEval, ALPHA};
pub use stats::{bonferroni, kendall_tau, wilcoxon_signed_rank, WilcoxonResult, EXACT_LIMIT};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, PostFeatures};
use crate::labels::{LabelMatrix, LabelRow};
use crate::train::RouterModel;

/// Train-free routers, one per post-retrieval feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heuristic {
    OverallSim,
    AvgSim,
    MaxSim,
    VarSim,
    Moran,
}

impl Heuristic {
    pub const ALL: [Heuristic; 5] = [
        Heuristic::OverallSim,
        Heuristic::AvgSim,
        Heuristic::MaxSim,
        Heuristic::VarSim,
        Heuristic::Moran,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Heuristic::OverallSim => "overall_sim",
            Heuristic::AvgSim => "avg_sim",
            Heuristic::MaxSim => "max_sim",
            Heuristic::VarSim => "var_sim",
            Heuristic::Moran => "moran",
        }
    }

    fn value(self, p: &PostFeatures) -> f64 {
        match self {
            Heuristic::OverallSim => p.overall_sim,
            Heuristic::AvgSim => p.avg_sim,
            Heuristic::MaxSim => p.max_sim,
            // Lower variance is better.
            Heuristic::VarSim => -p.var_sim,
            Heuristic::Moran => p.moran,
        }
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Heuristic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Heuristic::ALL
            .into_iter()
            .find(|h| h.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "heuristic",
                name: s.to_string(),
                supported: Heuristic::ALL.map(Heuristic::as_str).join(", "),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub query_id: String,
    pub chosen_retriever_id: String,
    pub ranked_retriever_ids: Vec<String>,
}

/// Orders ids by value descending, ties by id ascending.
fn rank_desc(query_id: &str, mut scored: Vec<(String, f64)>) -> RoutingDecision {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let ranked: Vec<String> = scored.into_iter().map(|(id, _)| id).collect();
    RoutingDecision {
        query_id: query_id.to_string(),
        chosen_retriever_id: ranked.first().cloned().unwrap_or_default(),
        ranked_retriever_ids: ranked,
    }
}

/// Ranks the retrievers that returned documents by one post-retrieval
/// feature. Options without post features (the no-retrieval option last)
/// follow in id order.
pub fn route_train_free(
    heuristic: Heuristic,
    query_id: &str,
    features: &[FeatureVector],
    no_retrieval_id: Option<&str>,
) -> Result<RoutingDecision> {
    let mut with = Vec::new();
    let mut without = Vec::new();
    for f in features {
        if no_retrieval_id == Some(f.retriever_id.as_str()) {
            continue;
        }
        match &f.post {
            Some(p) => with.push((f.retriever_id.clone(), heuristic.value(&PostFeatures::from_slice(p)?))),
            None => without.push(f.retriever_id.clone()),
        }
    }
    if with.is_empty() && without.is_empty() {
        return Err(Error::invalid(format!("{query_id}: no retrievers to route among")));
    }
    let mut d = rank_desc(query_id, with);
    without.sort();
    d.ranked_retriever_ids.extend(without);
    if let Some(id) = no_retrieval_id {
        if features.iter().any(|f| f.retriever_id == id) {
            d.ranked_retriever_ids.push(id.to_string());
        }
    }
    d.chosen_retriever_id = d.ranked_retriever_ids[0].clone();
    Ok(d)
}

/// Ranks every pool option, including no retrieval, by model score.
pub fn route_learned(model: &RouterModel, query_id: &str, features: &[FeatureVector]) -> Result<RoutingDecision> {
    for id in &model.pool_ids {
        if !features.iter().any(|f| &f.retriever_id == id) {
            return Err(Error::invalid(format!("{query_id}: missing features for option `{id}`")));
        }
    }
    let scored = features
        .iter()
        .map(|f| Ok((f.retriever_id.clone(), model.score(f)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_desc(query_id, scored))
}

/// Routes by precomputed scores, e.g. for custom scorers.
pub fn route_by_scores(query_id: &str, scores: &[(String, f64)]) -> RoutingDecision {
    rank_desc(query_id, scores.to_vec())
}

/// Chooses the option with the highest labeled utility.
pub fn route_oracle(row: &LabelRow) -> RoutingDecision {
    rank_desc(
        &row.query_id,
        row.cells.iter().map(|c| (c.retriever_id.clone(), c.utility)).collect(),
    )
}

/// Rows of `query_ids`, skipping flagged ones. Unknown ids are an error.
pub fn split_rows<'a>(labels: &'a LabelMatrix, query_ids: &[String]) -> Result<Vec<&'a LabelRow>> {
    let index = labels.index();
    let mut out = Vec::with_capacity(query_ids.len());
    for q in query_ids {
        let row = index
            .get(q.as_str())
            .ok_or_else(|| Error::invalid(format!("no labels for query {q}")))?;
        if row.flagged {
            log::warn!("query {q} has incomplete labels; excluded from evaluation");
            continue;
        }
        out.push(*row);
    }
    Ok(out)
}

fn mean_utility(rows: &[&LabelRow], retriever_id: &str) -> Result<f64> {
    let mut sum = 0.0;
    for r in rows {
        sum += r
            .cell(retriever_id)
            .ok_or_else(|| Error::invalid(format!("{}: no label for {retriever_id}", r.query_id)))?
            .utility;
    }
    Ok(sum / rows.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineSelection {
    #[default]
    Train,
    Test,
}

impl FromStr for BaselineSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(BaselineSelection::Train),
            "test" => Ok(BaselineSelection::Test),
            _ => Err(Error::Unknown {
                kind: "baseline selection",
                name: s.to_string(),
                supported: "train, test".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub retriever_id: String,
    /// Mean utility on the rows used for selection.
    pub selection_mean: f64,
    /// Mean utility on the reported rows.
    pub mean: f64,
}

/// The single retriever (no retrieval excluded) with the highest mean utility
/// on `select_rows`, reported on `report_rows`. Ties go to the lower id.
pub fn best_standard_baseline(
    pool_ids: &[String],
    no_retrieval_id: Option<&str>,
    select_rows: &[&LabelRow],
    report_rows: &[&LabelRow],
) -> Result<Baseline> {
    if select_rows.is_empty() || report_rows.is_empty() {
        return Err(Error::invalid("baseline selection needs non-empty splits"));
    }
    let mut ids: Vec<&String> = pool_ids.iter().filter(|id| Some(id.as_str()) != no_retrieval_id).collect();
    ids.sort();
    let mut best: Option<(&String, f64)> = None;
    for id in ids {
        let m = mean_utility(select_rows, id)?;
        if best.is_none_or(|(_, b)| m.total_cmp(&b) == Ordering::Greater) {
            best = Some((id, m));
        }
    }
    let (id, selection_mean) = best.ok_or_else(|| Error::invalid("pool has no standard retriever"))?;
    Ok(Baseline {
        retriever_id: id.clone(),
        selection_mean,
        mean: mean_utility(report_rows, id)?,
    })
}

/// The constant policy that always picks `retriever_id`.
pub fn constant_policy(rows: &[&LabelRow], retriever_id: &str) -> Vec<RoutingDecision> {
    rows.iter()
        .map(|r| RoutingDecision {
            query_id: r.query_id.clone(),
            chosen_retriever_id: retriever_id.to_string(),
            ranked_retriever_ids: vec![retriever_id.to_string()],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyScore {
    pub mean: f64,
    /// Utility of the chosen option for each row, in row order.
    pub per_query: Vec<f64>,
}

/// Labeled utility of each chosen option over `rows`.
pub fn evaluate_policy(decisions: &[RoutingDecision], rows: &[&LabelRow]) -> Result<PolicyScore> {
    if rows.is_empty() {
        return Err(Error::invalid("cannot evaluate a policy on an empty split"));
    }
    let in_split: HashSet<&str> = rows.iter().map(|r| r.query_id.as_str()).collect();
    let mut by_query: HashMap<&str, &RoutingDecision> = HashMap::new();
    for d in decisions {
        if !in_split.contains(d.query_id.as_str()) {
            return Err(Error::invalid(format!("decision for query {} outside the split", d.query_id)));
        }
        by_query.insert(&d.query_id, d);
    }
    let per_query = rows
        .iter()
        .map(|r| {
            let d = by_query
                .get(r.query_id.as_str())
                .ok_or_else(|| Error::invalid(format!("no decision for query {}", r.query_id)))?;
            r.cell(&d.chosen_retriever_id).map(|c| c.utility).ok_or_else(|| {
                Error::invalid(format!("{}: no label for {}", r.query_id, d.chosen_retriever_id))
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_query.iter().sum::<f64>() / per_query.len() as f64;
    Ok(PolicyScore { mean, per_query })
}

/// Inputs for evaluating every policy on one dataset split.
pub struct SplitInputs<'a> {
    pub name: &'a str,
    pub labels: &'a LabelMatrix,
    pub train_ids: &'a [String],
    pub test_ids: &'a [String],
    /// Features of every test query, keyed by query id.
    pub features: &'a HashMap<String, Vec<FeatureVector>>,
    pub no_retrieval_id: Option<&'a str>,
    pub selection: BaselineSelection,
    pub bonferroni_m: Option<usize>,
}

/// Oracle, best-standard, the five train-free routers and every learned
/// model, assessed against the baseline on the test portion.
pub fn evaluate_split(inputs: &SplitInputs, models: &[(String, &RouterModel)]) -> Result<SplitEval> {
    let test_rows = split_rows(inputs.labels, inputs.test_ids)?;
    let train_rows = split_rows(inputs.labels, inputs.train_ids)?;
    let select_rows = match inputs.selection {
        BaselineSelection::Train => &train_rows,
        BaselineSelection::Test => &test_rows,
    };
    let baseline = best_standard_baseline(&inputs.labels.pool_ids, inputs.no_retrieval_id, select_rows, &test_rows)?;
    let baseline_scores = evaluate_policy(&constant_policy(&test_rows, &baseline.retriever_id), &test_rows)?;
    let oracle: Vec<RoutingDecision> = test_rows.iter().map(|r| route_oracle(r)).collect();
    let oracle = evaluate_policy(&oracle, &test_rows)?;

    let features_of = |q: &str| {
        inputs
            .features
            .get(q)
            .ok_or_else(|| Error::invalid(format!("no features for test query {q}")))
    };
    let mut compared = Vec::new();
    for h in Heuristic::ALL {
        let decisions = test_rows
            .iter()
            .map(|r| route_train_free(h, &r.query_id, features_of(&r.query_id)?, inputs.no_retrieval_id))
            .collect::<Result<Vec<_>>>()?;
        compared.push((h.to_string(), PolicyKind::TrainFree, evaluate_policy(&decisions, &test_rows)?));
    }
    for (name, model) in models {
        let decisions = test_rows
            .iter()
            .map(|r| route_learned(model, &r.query_id, features_of(&r.query_id)?))
            .collect::<Result<Vec<_>>>()?;
        compared.push((name.clone(), PolicyKind::Learned, evaluate_policy(&decisions, &test_rows)?));
    }
    assess_split(inputs.name, &baseline, baseline_scores, oracle, compared, inputs.bonferroni_m)
}
