//! Downstream utility labels: per-option utility, gain over no-retrieval,
//! and per-query min-max normalization.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::QueryRecord;
use crate::error::{Error, Result};
use crate::retrieval::RetrieverPool;
use crate::text::{normalize, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityMetric {
    TokenF1,
    ExactMatch,
    ContextRecall,
}

impl UtilityMetric {
    pub const ALL: [UtilityMetric; 3] = [
        UtilityMetric::TokenF1,
        UtilityMetric::ExactMatch,
        UtilityMetric::ContextRecall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UtilityMetric::TokenF1 => "token_f1",
            UtilityMetric::ExactMatch => "exact_match",
            UtilityMetric::ContextRecall => "context_recall",
        }
    }
}

impl fmt::Display for UtilityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UtilityMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UtilityMetric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "metric",
                name: s.to_string(),
                supported: UtilityMetric::ALL.map(UtilityMetric::as_str).join(", "),
            })
    }
}

fn token_f1(prediction: &str, gold: &[String]) -> f64 {
    let pred = tokenize(prediction);
    if pred.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for g in gold {
        *counts.entry(g).or_default() += 1;
    }
    let mut common = 0usize;
    for p in &pred {
        if let Some(c) = counts.get_mut(p.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Scores `text` against the gold answer.
///
/// `context_recall` is the fraction of distinct gold tokens that occur in `text`.
pub fn utility_metric(text: &str, gold_answer: &str, metric: UtilityMetric) -> Result<f64> {
    let gold = tokenize(gold_answer);
    if gold.is_empty() {
        return Err(Error::invalid("gold answer has no tokens"));
    }
    Ok(match metric {
        UtilityMetric::TokenF1 => token_f1(text, &gold),
        UtilityMetric::ExactMatch => f64::from(u8::from(normalize(text) == gold.join(" "))),
        UtilityMetric::ContextRecall => {
            let have: HashSet<String> = tokenize(text).into_iter().collect();
            let distinct: HashSet<&String> = gold.iter().collect();
            distinct.iter().filter(|g| have.contains(g.as_str())).count() as f64 / distinct.len() as f64
        }
    })
}

/// Downstream utility of answering a query with or without retrieved context.
pub trait UtilityOracle: Send + Sync {
    fn with_context(&self, query: &QueryRecord, docs: &[&str]) -> Result<f64>;
    fn without_context(&self, query: &QueryRecord) -> Result<f64>;
}

/// Deterministic stand-in for a generator plus judge: the context itself is
/// scored against the gold answer, and the no-retrieval utility comes from
/// the query's `no_ret_utility` field (default 0).
#[derive(Debug, Clone, Copy)]
pub struct SimulatedGenerator {
    pub metric: UtilityMetric,
}

impl UtilityOracle for SimulatedGenerator {
    fn with_context(&self, query: &QueryRecord, docs: &[&str]) -> Result<f64> {
        utility_metric(&docs.join("\n"), &query.gold_answer, self.metric)
    }

    fn without_context(&self, query: &QueryRecord) -> Result<f64> {
        Ok(query.no_ret_utility.unwrap_or(0.0))
    }
}

pub fn compute_delta(utility: f64, utility_no_retrieval: f64) -> f64 {
    utility - utility_no_retrieval
}

/// `(x - min) / (max - min)`; every entry becomes 0.5 when the range is empty.
pub fn min_max_normalize(deltas: &[f64]) -> Vec<f64> {
    let lo = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        deltas.iter().map(|d| (d - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; deltas.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityRecord {
    pub query_id: String,
    pub retriever_id: String,
    pub utility: f64,
    pub delta: f64,
    pub delta_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub query_id: String,
    pub cells: Vec<UtilityRecord>,
    /// Some retriever failed; the row lacks cells and is kept out of training.
    pub flagged: bool,
}

impl LabelRow {
    /// Builds a row from raw utilities. The no-retrieval option takes part in
    /// the normalization with a gain of exactly zero.
    pub fn from_utilities(query_id: &str, utilities: &[(String, f64)], no_retrieval_id: &str) -> Result<Self> {
        let u0 = utilities
            .iter()
            .find(|(id, _)| id == no_retrieval_id)
            .map(|(_, u)| *u)
            .ok_or_else(|| Error::invalid(format!("label row {query_id} lacks `{no_retrieval_id}`")))?;
        let deltas: Vec<f64> = utilities
            .iter()
            .map(|(id, u)| if id == no_retrieval_id { 0.0 } else { compute_delta(*u, u0) })
            .collect();
        let norm = min_max_normalize(&deltas);
        let cells = utilities
            .iter()
            .zip(deltas.iter().zip(norm))
            .map(|((id, u), (&delta, delta_norm))| UtilityRecord {
                query_id: query_id.to_string(),
                retriever_id: id.clone(),
                utility: *u,
                delta,
                delta_norm,
            })
            .collect();
        Ok(LabelRow {
            query_id: query_id.to_string(),
            cells,
            flagged: false,
        })
    }

    pub fn cell(&self, retriever_id: &str) -> Option<&UtilityRecord> {
        self.cells.iter().find(|c| c.retriever_id == retriever_id)
    }

    pub fn max_utility(&self) -> f64 {
        self.cells.iter().map(|c| c.utility).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelMatrix {
    pub pool_ids: Vec<String>,
    pub rows: Vec<LabelRow>,
}

impl LabelMatrix {
    pub fn row(&self, query_id: &str) -> Option<&LabelRow> {
        self.rows.iter().find(|r| r.query_id == query_id)
    }

    pub fn index(&self) -> HashMap<&str, &LabelRow> {
        self.rows.iter().map(|r| (r.query_id.as_str(), r)).collect()
    }

    pub fn records(&self) -> impl Iterator<Item = &UtilityRecord> {
        self.rows.iter().flat_map(|r| r.cells.iter())
    }

    /// Regroups flat records by query, in first-seen order. Rows missing any
    /// pool option are flagged.
    pub fn from_records(pool_ids: Vec<String>, records: Vec<UtilityRecord>) -> Self {
        let mut order: Vec<String> = Vec::new();
        let mut by_query: HashMap<String, Vec<UtilityRecord>> = HashMap::new();
        for r in records {
            if !by_query.contains_key(&r.query_id) {
                order.push(r.query_id.clone());
            }
            by_query.entry(r.query_id.clone()).or_default().push(r);
        }
        let rows = order
            .into_iter()
            .map(|qid| {
                let cells = by_query.remove(&qid).unwrap_or_default();
                let flagged = !pool_ids.iter().all(|id| cells.iter().any(|c| &c.retriever_id == id));
                LabelRow {
                    query_id: qid,
                    cells,
                    flagged,
                }
            })
            .collect();
        LabelMatrix { pool_ids, rows }
    }
}

/// Runs every pool option for every query and labels the results.
pub fn build_label_matrix(
    queries: &[QueryRecord],
    pool: &RetrieverPool,
    k: usize,
    oracle: &dyn UtilityOracle,
) -> Result<LabelMatrix> {
    let no_ret = pool
        .no_retrieval_id()
        .ok_or_else(|| Error::invalid("label computation needs a no-retrieval option in the pool"))?
        .to_string();
    let pool_ids: Vec<String> = pool.ids().iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::with_capacity(queries.len());
    for q in queries {
        let mut utilities = Vec::with_capacity(pool_ids.len());
        let mut flagged = false;
        for id in &pool_ids {
            let u = if *id == no_ret {
                oracle.without_context(q)
            } else {
                pool.retrieve(id, &q.id, &q.text, k).and_then(|list| {
                    let texts: Vec<&str> = list.doc_ids().filter_map(|d| pool.doc_text(d)).collect();
                    oracle.with_context(q, &texts)
                })
            };
            match u {
                Ok(u) => utilities.push((id.clone(), u.clamp(0.0, 1.0))),
                Err(e) => {
                    log::warn!("query {}: retriever {id} failed: {e}", q.id);
                    flagged = true;
                }
            }
        }
        let mut row = LabelRow::from_utilities(&q.id, &utilities, &no_ret)?;
        row.flagged = flagged;
        rows.push(row);
    }
    Ok(LabelMatrix { pool_ids, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusRecord, QueryType};
    use crate::retrieval::{default_pool_specs, make_retriever_pool, HashEmbedder};
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        assert_eq!(utility_metric("paris", "paris", UtilityMetric::TokenF1).unwrap(), 1.0);
        assert_eq!(utility_metric("london", "paris", UtilityMetric::TokenF1).unwrap(), 0.0);
        assert_eq!(utility_metric("Paris!", "paris", UtilityMetric::ExactMatch).unwrap(), 1.0);
        assert_eq!(
            utility_metric("the eiffel tower", "eiffel tower paris france", UtilityMetric::ContextRecall).unwrap(),
            0.5
        );
        assert!("bem".parse::<UtilityMetric>().is_err());
        assert!(utility_metric("x", "  ", UtilityMetric::TokenF1).is_err());
    }

    #[test]
    fn delta_examples() {
        assert!((compute_delta(0.7, 0.2) - 0.5).abs() < 1e-12);
        assert_eq!(compute_delta(0.4, 0.4), 0.0);
        assert!((compute_delta(0.1, 0.4) + 0.3).abs() < 1e-12);
    }

    #[test]
    fn normalize_examples() {
        let n = min_max_normalize(&[-0.1, 0.3, 0.1]);
        assert!((n[0] - 0.0).abs() < 1e-12 && (n[1] - 1.0).abs() < 1e-12 && (n[2] - 0.5).abs() < 1e-12);
        assert_eq!(min_max_normalize(&[0.2, 0.2, 0.2]), vec![0.5; 3]);
        assert_eq!(min_max_normalize(&[0.7]), vec![0.5]);
    }

    #[test]
    fn two_retriever_row_by_hand() {
        let u = vec![("r1".to_string(), 0.8), ("r2".to_string(), 0.4), ("none".to_string(), 0.2)];
        let row = LabelRow::from_utilities("q", &u, "none").unwrap();
        let d: Vec<f64> = row.cells.iter().map(|c| c.delta).collect();
        let n: Vec<f64> = row.cells.iter().map(|c| c.delta_norm).collect();
        for (a, b) in d.iter().zip([0.6, 0.2, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in n.iter().zip([1.0, 1.0 / 3.0, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn demo() -> (Vec<QueryRecord>, RetrieverPool) {
        let docs = vec![
            CorpusRecord { id: "d1".into(), text: "the zebra stripes pattern".into() },
            CorpusRecord { id: "d2".into(), text: "lions hunt at night".into() },
            CorpusRecord { id: "d3".into(), text: "elephants remember water sources".into() },
        ];
        let queries = (0..10)
            .map(|i| QueryRecord {
                id: format!("q{i}"),
                text: ["zebra pattern", "lions night", "elephants water"][i % 3].into(),
                gold_answer: ["stripes", "hunt", "remember"][i % 3].into(),
                query_type: QueryType::Factoid,
                no_ret_utility: Some(0.1),
            })
            .collect();
        let pool = make_retriever_pool(&default_pool_specs(), docs, Box::new(HashEmbedder::new(16, 0).unwrap())).unwrap();
        (queries, pool)
    }

    #[test]
    fn complete_matrix() {
        let (queries, pool) = demo();
        let m = build_label_matrix(&queries, &pool, 1, &SimulatedGenerator { metric: UtilityMetric::ContextRecall }).unwrap();
        assert_eq!(m.records().count(), 70);
        for row in &m.rows {
            assert!(!row.flagged);
            assert_eq!(row.cell("none").unwrap().delta, 0.0);
        }
    }

    #[test]
    fn unique_answer_holder_gets_top_label() {
        let docs = vec![
            CorpusRecord { id: "d1".into(), text: "alpha beta".into() },
            CorpusRecord { id: "d2".into(), text: "gamma delta".into() },
        ];
        let specs = vec![
            crate::retrieval::RetrieverSpec::new("bm25", crate::retrieval::Base::Bm25, Default::default()),
            crate::retrieval::RetrieverSpec::new("none", crate::retrieval::Base::None, Default::default()),
        ];
        let pool = make_retriever_pool(&specs, docs, Box::new(HashEmbedder::new(16, 0).unwrap())).unwrap();
        let q = QueryRecord {
            id: "q".into(),
            text: "alpha".into(),
            gold_answer: "beta".into(),
            query_type: QueryType::Factoid,
            no_ret_utility: None,
        };
        let m = build_label_matrix(&[q], &pool, 1, &SimulatedGenerator { metric: UtilityMetric::ContextRecall }).unwrap();
        assert_eq!(m.rows[0].cell("bm25").unwrap().delta_norm, 1.0);
    }

    proptest! {
        #[test]
        fn normalized_rows_span_unit_interval(us in prop::collection::vec(0.0f64..1.0, 1..8), u0 in 0.0f64..1.0) {
            let mut utilities: Vec<(String, f64)> = us.iter().enumerate().map(|(i, u)| (format!("r{i}"), *u)).collect();
            utilities.push(("none".into(), u0));
            let row = LabelRow::from_utilities("q", &utilities, "none").unwrap();
            let n: Vec<f64> = row.cells.iter().map(|c| c.delta_norm).collect();
            let lo = n.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = n.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if n.iter().all(|&x| x == 0.5) {
                prop_assert!(row.cells.iter().all(|c| c.delta == row.cells[0].delta));
            } else {
                prop_assert_eq!(lo, 0.0);
                prop_assert_eq!(hi, 1.0);
            }
            for a in &row.cells {
                for b in &row.cells {
                    if a.delta < b.delta {
                        prop_assert!(a.delta_norm < b.delta_norm);
                    }
                }
            }
        }
    }
}
