//! Document and query stores, ingestion, and train/test splits.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryType {
    Factoid,
    MultiAspect,
    Comparison,
    Complex,
    OpenEnded,
    Other,
}

impl QueryType {
    pub const ALL: [QueryType; 6] = [
        QueryType::Factoid,
        QueryType::MultiAspect,
        QueryType::Comparison,
        QueryType::Complex,
        QueryType::OpenEnded,
        QueryType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryType::Factoid => "factoid",
            QueryType::MultiAspect => "multi-aspect",
            QueryType::Comparison => "comparison",
            QueryType::Complex => "complex",
            QueryType::OpenEnded => "open-ended",
            QueryType::Other => "other",
        }
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QueryType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "query type",
                name: s.to_string(),
                supported: QueryType::ALL.map(QueryType::as_str).join(", "),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub id: String,
    pub text: String,
    pub gold_answer: String,
    pub query_type: QueryType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_ret_utility: Option<f64>,
}

/// A record kind that can be ingested from a line-delimited file.
pub trait Record {
    fn id(&self) -> &str;
    fn validate(&self) -> Result<()>;
}

impl Record for CorpusRecord {
    fn id(&self) -> &str {
        &self.id
    }

    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(invalid_record(&self.id, "empty id"));
        }
        if self.text.trim().is_empty() {
            return Err(invalid_record(&self.id, "empty text"));
        }
        Ok(())
    }
}

impl Record for QueryRecord {
    fn id(&self) -> &str {
        &self.id
    }

    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(invalid_record(&self.id, "empty id"));
        }
        if self.text.trim().is_empty() {
            return Err(invalid_record(&self.id, "empty text"));
        }
        if self.gold_answer.trim().is_empty() {
            return Err(invalid_record(&self.id, "empty gold_answer"));
        }
        if let Some(u) = self.no_ret_utility {
            if !(0.0..=1.0).contains(&u) {
                return Err(invalid_record(
                    &self.id,
                    &format!("no_ret_utility {u} outside [0, 1]"),
                ));
            }
        }
        Ok(())
    }
}

fn invalid_record(id: &str, message: &str) -> Error {
    Error::InvalidRecord {
        id: id.to_string(),
        message: message.to_string(),
    }
}

/// Validates records and rejects duplicate ids, preserving order.
pub fn check_records<T: Record>(records: &[T]) -> Result<()> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        r.validate()?;
        if !seen.insert(r.id()) {
            return Err(Error::DuplicateId(r.id().to_string()));
        }
    }
    Ok(())
}

/// Reads and validates a line-delimited record file.
pub fn ingest<T>(path: &Path) -> Result<Vec<T>>
where
    T: Record + serde::de::DeserializeOwned,
{
    let records: Vec<T> = jsonl::read_jsonl(path)?;
    check_records(&records)?;
    log::info!("ingested {} records from {}", records.len(), path.display());
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitScheme {
    Balanced,
    Unseen(QueryType),
}

impl FromStr for SplitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "balanced" {
            return Ok(SplitScheme::Balanced);
        }
        match s.strip_prefix("unseen:") {
            Some(t) => Ok(SplitScheme::Unseen(t.parse()?)),
            None => Err(Error::Unknown {
                kind: "split scheme",
                name: s.to_string(),
                supported: "balanced, unseen:<type>".into(),
            }),
        }
    }
}

impl fmt::Display for SplitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitScheme::Balanced => f.write_str("balanced"),
            SplitScheme::Unseen(t) => write!(f, "unseen:{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: String,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl DatasetSplit {
    pub fn is_test(&self, id: &str) -> bool {
        self.test_ids.iter().any(|t| t == id)
    }
}

/// Builds a train/test split.
///
/// `Balanced` stratifies by query type: each stratum is shuffled, then
/// `floor(n * (1 - ratio))` queries go to test and the rest to train.
/// `Unseen(t)` puts every query of type `t` in test and all others in train.
/// Ids within each side keep the input order.
pub fn make_splits(
    queries: &[QueryRecord],
    scheme: SplitScheme,
    ratio: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if queries.is_empty() {
        return Err(Error::invalid("cannot split an empty query set"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} outside (0, 1)")));
    }

    let test: HashSet<&str> = match scheme {
        SplitScheme::Unseen(held_out) => {
            let test: HashSet<&str> = queries
                .iter()
                .filter(|q| q.query_type == held_out)
                .map(|q| q.id.as_str())
                .collect();
            if test.is_empty() {
                return Err(Error::invalid(format!(
                    "held-out type `{held_out}` has no queries"
                )));
            }
            test
        }
        SplitScheme::Balanced => {
            let mut strata: BTreeMap<QueryType, Vec<&str>> = BTreeMap::new();
            for q in queries {
                strata.entry(q.query_type).or_default().push(&q.id);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut test = HashSet::new();
            for (_, mut ids) in strata {
                ids.shuffle(&mut rng);
                let n_test = (ids.len() as f64 * (1.0 - ratio) + 1e-9).floor() as usize;
                test.extend(ids.into_iter().take(n_test));
            }
            test
        }
    };

    let (test_ids, train_ids) = queries
        .iter()
        .map(|q| q.id.clone())
        .partition(|id| test.contains(id.as_str()));

    Ok(DatasetSplit {
        name: scheme.to_string(),
        train_ids,
        test_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn query(id: &str, t: QueryType) -> QueryRecord {
        QueryRecord {
            id: id.into(),
            text: format!("question {id}"),
            gold_answer: "answer".into(),
            query_type: t,
            no_ret_utility: None,
        }
    }

    fn write_tmp(lines: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(lines.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_empty_file() {
        let f = write_tmp("");
        let docs: Vec<CorpusRecord> = ingest(f.path()).unwrap();
        assert!(docs.is_empty());
    }

    #[test]
    fn ingest_preserves_order() {
        let f = write_tmp(
            "{\"id\":\"d1\",\"text\":\"a\"}\n{\"id\":\"d2\",\"text\":\"b\"}\n{\"id\":\"d3\",\"text\":\"c\"}\n",
        );
        let docs: Vec<CorpusRecord> = ingest(f.path()).unwrap();
        let ids: Vec<_> = docs.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["d1", "d2", "d3"]);
    }

    #[test]
    fn ingest_rejects_duplicates_by_name() {
        let f = write_tmp(concat!(
            "{\"id\":\"q7\",\"text\":\"a\",\"gold_answer\":\"x\",\"query_type\":\"factoid\"}\n",
            "{\"id\":\"q7\",\"text\":\"b\",\"gold_answer\":\"y\",\"query_type\":\"factoid\"}\n",
        ));
        let err = ingest::<QueryRecord>(f.path()).unwrap_err();
        assert!(err.to_string().contains("q7"), "{err}");
    }

    #[test]
    fn ingest_reports_malformed_line_number() {
        let f = write_tmp("{\"id\":\"d1\",\"text\":\"a\"}\nnot json\n");
        match ingest::<CorpusRecord>(f.path()).unwrap_err() {
            Error::MalformedRecord { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn ingest_rejects_out_of_range_no_ret_utility() {
        let f = write_tmp(
            "{\"id\":\"q1\",\"text\":\"a\",\"gold_answer\":\"x\",\"query_type\":\"factoid\",\"no_ret_utility\":1.5}\n",
        );
        assert!(ingest::<QueryRecord>(f.path()).is_err());
    }

    fn five_types_two_each() -> Vec<QueryRecord> {
        let types = [
            QueryType::Factoid,
            QueryType::MultiAspect,
            QueryType::Comparison,
            QueryType::Complex,
            QueryType::OpenEnded,
        ];
        (0..10).map(|i| query(&format!("q{i}"), types[i / 2])).collect()
    }

    #[test]
    fn unseen_split_holds_out_exactly_one_type() {
        let qs = five_types_two_each();
        let split = make_splits(&qs, "unseen:comparison".parse().unwrap(), 0.8, 1).unwrap();
        assert_eq!(split.train_ids.len(), 8);
        assert_eq!(split.test_ids, vec!["q4", "q5"]);
        assert_eq!(split.name, "unseen:comparison");
    }

    #[test]
    fn unseen_split_requires_the_type() {
        let qs: Vec<_> = (0..4).map(|i| query(&format!("q{i}"), QueryType::Factoid)).collect();
        assert!(make_splits(&qs, SplitScheme::Unseen(QueryType::Complex), 0.8, 1).is_err());
    }

    #[test]
    fn balanced_single_type() {
        let qs: Vec<_> = (0..10).map(|i| query(&format!("q{i}"), QueryType::Factoid)).collect();
        let split = make_splits(&qs, SplitScheme::Balanced, 0.8, 3).unwrap();
        assert_eq!(split.train_ids.len(), 8);
        assert_eq!(split.test_ids.len(), 2);
    }

    #[test]
    fn ratio_must_be_open_interval() {
        let qs = five_types_two_each();
        assert!(make_splits(&qs, SplitScheme::Balanced, 1.0, 0).is_err());
        assert!(make_splits(&qs, SplitScheme::Balanced, 0.0, 0).is_err());
    }

    #[test]
    fn splits_are_deterministic() {
        let qs = five_types_two_each();
        let a = make_splits(&qs, SplitScheme::Balanced, 0.5, 9).unwrap();
        let b = make_splits(&qs, SplitScheme::Balanced, 0.5, 9).unwrap();
        assert_eq!(a, b);
    }

    fn arb_queries() -> impl Strategy<Value = Vec<QueryRecord>> {
        prop::collection::vec(0usize..5, 1..60).prop_map(|types| {
            types
                .into_iter()
                .enumerate()
                .map(|(i, t)| query(&format!("q{i}"), QueryType::ALL[t]))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn splits_partition_queries(qs in arb_queries(), ratio in 0.05f64..0.95, seed: u64, held in 0usize..5) {
            let schemes = [SplitScheme::Balanced, SplitScheme::Unseen(QueryType::ALL[held])];
            for scheme in schemes {
                let Ok(split) = make_splits(&qs, scheme, ratio, seed) else {
                    prop_assert!(matches!(scheme, SplitScheme::Unseen(t) if qs.iter().all(|q| q.query_type != t)));
                    continue;
                };
                let train: HashSet<_> = split.train_ids.iter().collect();
                let test: HashSet<_> = split.test_ids.iter().collect();
                prop_assert!(train.is_disjoint(&test));
                prop_assert_eq!(train.len() + test.len(), qs.len());
                if let SplitScheme::Unseen(t) = scheme {
                    for q in &qs {
                        prop_assert_eq!(test.contains(&q.id), q.query_type == t);
                    }
                }
            }
        }

        #[test]
        fn query_record_json_round_trip(text in "[a-zA-Z ?]{1,30}", u in prop::option::of(0.0f64..=1.0)) {
            let q = QueryRecord {
                id: "q1".into(),
                text,
                gold_answer: "gold".into(),
                query_type: QueryType::Complex,
                no_ret_utility: u,
            };
            let line = serde_json::to_string(&q).unwrap();
            let back: QueryRecord = serde_json::from_str(&line).unwrap();
            prop_assert_eq!(serde_json::to_string(&back).unwrap(), line);
            prop_assert_eq!(back, q);
        }
    }
}
