//! Stage runner behind the command-line tool.
//!
//! Each stage writes its artifacts under the run's output directory. A stage
//! whose upstream artifacts are missing recomputes them in memory, so any
//! stage can run on its own; upstream artifacts found on disk are reused
//! after their config fingerprint is checked.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::{ingest, make_splits, CorpusRecord, DatasetSplit, QueryRecord};
use crate::error::{Error, Result};
use crate::eval::{evaluate_split, route_learned, render_report, EvalReport, RoutingDecision, SplitInputs};
use crate::features::{extract_query_features, pca_fit, FeatureVector, HeuristicClassifier, PcaModel};
use crate::jsonl;
use crate::labels::{build_label_matrix, LabelMatrix, SimulatedGenerator, UtilityRecord};
use crate::retrieval::{make_retriever_pool, EmbeddingProvider, FileEmbeddings, HashEmbedder, RetrieverPool};
use crate::train::{load_model, save_model, train, Algo, ModelMeta, RouterModel, TrainingSet, MODEL_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Index,
    Split,
    Features,
    Label,
    Train,
    Route,
    Eval,
    Report,
    Pipeline,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Ingest,
        Stage::Index,
        Stage::Split,
        Stage::Features,
        Stage::Label,
        Stage::Train,
        Stage::Route,
        Stage::Eval,
        Stage::Report,
        Stage::Pipeline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Index => "index",
            Stage::Split => "split",
            Stage::Features => "features",
            Stage::Label => "label",
            Stage::Train => "train",
            Stage::Route => "route",
            Stage::Eval => "eval",
            Stage::Report => "report",
            Stage::Pipeline => "pipeline",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| Error::Unknown {
            kind: "subcommand",
            name: s.to_string(),
            supported: Stage::ALL.map(Stage::as_str).join(", "),
        })
    }
}

/// One record of a line-delimited artifact, tagged with the run's fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_fingerprint: String,
    #[serde(flatten)]
    pub record: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tagged<T> {
    config_fingerprint: String,
    #[serde(flatten)]
    body: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IngestSummary {
    documents: usize,
    queries: usize,
    query_types: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexSummary {
    num_docs: usize,
    vocabulary_size: usize,
    avg_doc_len: f64,
    embedding_dim: usize,
    pool: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Splits {
    splits: Vec<DatasetSplit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PcaArtifact {
    split: String,
    pca: PcaModel,
}

/// Written once per stage invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_fingerprint: String,
    pub package_version: String,
    pub model_version: u32,
    pub seeds: BTreeMap<String, u64>,
    pub algorithms: Vec<String>,
    pub splits: Vec<String>,
    pub outputs: Vec<String>,
}

pub const LABELS_FILE: &str = "labels.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TSV: &str = "report.tsv";
pub const REPORT_TXT: &str = "report.txt";

/// Filesystem-safe form of a split name.
pub fn split_slug(name: &str) -> String {
    name.replace(':', "-")
}

pub fn model_path(split: &str, algo: Algo) -> PathBuf {
    PathBuf::from("models").join(split_slug(split)).join(format!("{algo}.json"))
}

struct SplitFeatures {
    pca: PcaModel,
    by_query: HashMap<String, Vec<FeatureVector>>,
}

/// State of one run: the resolved config plus everything computed so far.
pub struct Run {
    cfg: RunConfig,
    fingerprint: String,
    algos: Vec<Algo>,
    docs: Option<Vec<CorpusRecord>>,
    queries: Option<Vec<QueryRecord>>,
    pool: Option<RetrieverPool>,
    splits: Option<Vec<DatasetSplit>>,
    labels: Option<LabelMatrix>,
    features: HashMap<String, SplitFeatures>,
    models: HashMap<(String, Algo), RouterModel>,
    report: Option<EvalReport>,
    written: Vec<String>,
}

impl Run {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let fingerprint = cfg.fingerprint()?;
        let algos = cfg.algorithms()?;
        Ok(Run {
            cfg,
            fingerprint,
            algos,
            docs: None,
            queries: None,
            pool: None,
            splits: None,
            labels: None,
            features: HashMap::new(),
            models: HashMap::new(),
            report: None,
            written: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn output_dir(&self) -> &Path {
        &self.cfg.paths.output_dir
    }

    fn path(&self, rel: &Path) -> PathBuf {
        self.output_dir().join(rel)
    }

    fn record_output(&mut self, rel: &Path) {
        self.written.push(rel.to_string_lossy().replace('\\', "/"));
    }

    fn check(&self, found: &str, artifact: &Path) -> Result<()> {
        if found != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.fingerprint.clone(),
                found: found.to_string(),
                artifact: artifact.display().to_string(),
            });
        }
        Ok(())
    }

    fn write_tagged<T: Serialize>(&mut self, rel: &Path, body: T) -> Result<()> {
        let tagged = Tagged {
            config_fingerprint: self.fingerprint.clone(),
            body,
        };
        jsonl::write_json(&self.path(rel), &tagged)?;
        self.record_output(rel);
        Ok(())
    }

    fn read_tagged<T: DeserializeOwned>(&self, rel: &Path) -> Result<Option<T>> {
        let path = self.path(rel);
        if !path.is_file() {
            return Ok(None);
        }
        let tagged: Tagged<T> = jsonl::read_json(&path)?;
        self.check(&tagged.config_fingerprint, &path)?;
        Ok(Some(tagged.body))
    }

    fn write_stamped<T: Serialize + Clone>(&mut self, rel: &Path, records: &[T]) -> Result<()> {
        let stamped: Vec<Stamped<T>> = records
            .iter()
            .map(|r| Stamped {
                config_fingerprint: self.fingerprint.clone(),
                record: r.clone(),
            })
            .collect();
        jsonl::write_jsonl(&self.path(rel), &stamped)?;
        self.record_output(rel);
        Ok(())
    }

    fn read_stamped<T: DeserializeOwned>(&self, rel: &Path) -> Result<Option<Vec<T>>> {
        let path = self.path(rel);
        if !path.is_file() {
            return Ok(None);
        }
        let stamped: Vec<Stamped<T>> = jsonl::read_jsonl(&path)?;
        stamped
            .into_iter()
            .map(|s| {
                self.check(&s.config_fingerprint, &path)?;
                Ok(s.record)
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn load_inputs(&mut self) -> Result<()> {
        if self.docs.is_none() {
            self.docs = Some(ingest(&self.cfg.paths.documents)?);
        }
        if self.queries.is_none() {
            self.queries = Some(ingest(&self.cfg.paths.queries)?);
        }
        Ok(())
    }

    fn queries(&mut self) -> Result<&[QueryRecord]> {
        self.load_inputs()?;
        Ok(self.queries.as_deref().unwrap_or_default())
    }

    fn pool(&mut self) -> Result<&RetrieverPool> {
        if self.pool.is_none() {
            self.load_inputs()?;
            let provider: Box<dyn EmbeddingProvider> = match &self.cfg.paths.embeddings {
                Some(p) => Box::new(FileEmbeddings::load(p)?),
                None => Box::new(HashEmbedder::new(self.cfg.embedding_dim, self.cfg.module_seed("embedding"))?),
            };
            let docs = self.docs.clone().unwrap_or_default();
            self.pool = Some(make_retriever_pool(&self.cfg.effective_pool(), docs, provider)?);
        }
        Ok(self.pool.as_ref().expect("pool built above"))
    }

    fn no_retrieval_id(&mut self) -> Result<String> {
        self.pool()?
            .no_retrieval_id()
            .map(str::to_string)
            .ok_or_else(|| Error::invalid("pool has no no-retrieval option"))
    }

    fn all_splits(&mut self) -> Result<&[DatasetSplit]> {
        if self.splits.is_none() {
            let loaded = self.read_tagged::<Splits>(Path::new("splits.json"))?.map(|s| s.splits);
            let splits = match loaded {
                Some(s) => s,
                None => {
                    let seed = self.cfg.module_seed("split");
                    let ratio = self.cfg.split.ratio;
                    let schemes = self.cfg.split_schemes()?;
                    let queries = self.queries()?;
                    schemes
                        .into_iter()
                        .map(|s| make_splits(queries, s, ratio, seed))
                        .collect::<Result<Vec<_>>>()?
                }
            };
            self.splits = Some(splits);
        }
        Ok(self.splits.as_deref().unwrap_or_default())
    }

    /// The splits selected by the config, in configured order.
    fn selected_splits(&mut self) -> Result<Vec<DatasetSplit>> {
        let wanted = self.cfg.split.schemes.clone();
        let all = self.all_splits()?;
        wanted
            .iter()
            .map(|w| {
                all.iter()
                    .find(|s| &s.name == w)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("split `{w}` not found in splits.json")))
            })
            .collect()
    }

    fn labels(&mut self) -> Result<&LabelMatrix> {
        if self.labels.is_none() {
            let pool_ids: Vec<String> = self.pool()?.ids().iter().map(|s| s.to_string()).collect();
            let labels = match self.read_stamped::<UtilityRecord>(Path::new(LABELS_FILE))? {
                Some(records) => LabelMatrix::from_records(pool_ids, records),
                None => {
                    self.load_inputs()?;
                    let oracle = SimulatedGenerator { metric: self.cfg.metric };
                    let pool = self.pool.as_ref().expect("pool built above");
                    build_label_matrix(self.queries.as_deref().unwrap_or_default(), pool, self.cfg.k, &oracle)?
                }
            };
            self.labels = Some(labels);
        }
        Ok(self.labels.as_ref().expect("labels set above"))
    }

    fn features_rel(split: &str) -> (PathBuf, PathBuf) {
        let slug = split_slug(split);
        (
            PathBuf::from("features").join(format!("{slug}.jsonl")),
            PathBuf::from("features").join(format!("{slug}.pca.json")),
        )
    }

    fn split_features(&mut self, split: &DatasetSplit) -> Result<&SplitFeatures> {
        if !self.features.contains_key(&split.name) {
            let (rows_rel, pca_rel) = Self::features_rel(&split.name);
            let stored = match (
                self.read_stamped::<FeatureVector>(&rows_rel)?,
                self.read_tagged::<PcaArtifact>(&pca_rel)?,
            ) {
                (Some(rows), Some(p)) => Some((p.pca, rows)),
                _ => None,
            };
            let (pca, rows) = match stored {
                Some(s) => s,
                None => self.compute_features(split)?,
            };
            let mut by_query: HashMap<String, Vec<FeatureVector>> = HashMap::new();
            for r in rows {
                by_query.entry(r.query_id.clone()).or_default().push(r);
            }
            self.features.insert(split.name.clone(), SplitFeatures { pca, by_query });
        }
        Ok(&self.features[&split.name])
    }

    /// PCA is fitted on the split's training queries only.
    fn compute_features(&mut self, split: &DatasetSplit) -> Result<(PcaModel, Vec<FeatureVector>)> {
        let pca_seed = self.cfg.module_seed("pca");
        let (k, r) = (self.cfg.k, self.cfg.pca_dim);
        self.pool()?;
        let pool = self.pool.as_ref().expect("pool built above");
        let queries = self.queries.as_deref().unwrap_or_default();
        let train: std::collections::HashSet<&str> = split.train_ids.iter().map(String::as_str).collect();
        let train_vectors = queries
            .iter()
            .filter(|q| train.contains(q.id.as_str()))
            .map(|q| pool.embed_query(&q.id, &q.text).map(|e| e.values))
            .collect::<Result<Vec<_>>>()?;
        let pca = pca_fit(&train_vectors, r, pca_seed).map_err(|e| Error::Config {
            field: "pca_dim".into(),
            message: format!("split {}: {e}", split.name),
        })?;
        let mut rows = Vec::new();
        for q in queries {
            let lists = pool.retrieve_all(&q.id, &q.text, k)?;
            rows.extend(extract_query_features(pool, &pca, &HeuristicClassifier, &q.id, &q.text, &lists)?);
        }
        Ok((pca, rows))
    }

    fn model(&mut self, split: &DatasetSplit, algo: Algo) -> Result<&RouterModel> {
        let key = (split.name.clone(), algo);
        if !self.models.contains_key(&key) {
            let path = self.path(&model_path(&split.name, algo));
            let model = if path.is_file() {
                let m = load_model(&path)?;
                self.check(&m.config_fingerprint, &path)?;
                m
            } else {
                self.fit(split, algo)?
            };
            self.models.insert(key.clone(), model);
        }
        Ok(&self.models[&key])
    }

    fn fit(&mut self, split: &DatasetSplit, algo: Algo) -> Result<RouterModel> {
        let no_ret = self.no_retrieval_id()?;
        self.labels()?;
        self.split_features(split)?;
        let sf = &self.features[&split.name];
        let rows: Vec<FeatureVector> = split
            .train_ids
            .iter()
            .filter_map(|q| sf.by_query.get(q))
            .flatten()
            .cloned()
            .collect();
        let labels = self.labels.as_ref().expect("labels set above");
        let data = TrainingSet::from_features(&rows, labels, &split.train_ids, Some(no_ret))?;
        let meta = ModelMeta {
            pca: Some(sf.pca.clone()),
            config_fingerprint: self.fingerprint.clone(),
        };
        let trained = train(algo, &data, &self.cfg.train_config(), meta)?;
        log::info!(
            "{} on {}: final loss {:.6}",
            algo,
            split.name,
            trained.loss_history.last().copied().unwrap_or(f64::NAN)
        );
        Ok(trained.model)
    }

    fn evaluate(&mut self) -> Result<&EvalReport> {
        if self.report.is_none() {
            let stored = match self.path(Path::new(REPORT_JSON)) {
                p if p.is_file() => {
                    let r: EvalReport = jsonl::read_json(&p)?;
                    self.check(&r.config_fingerprint, &p)?;
                    Some(r)
                }
                _ => None,
            };
            let report = match stored {
                Some(r) => r,
                None => self.compute_report()?,
            };
            self.report = Some(report);
        }
        Ok(self.report.as_ref().expect("report set above"))
    }

    fn compute_report(&mut self) -> Result<EvalReport> {
        let no_ret = self.no_retrieval_id()?;
        let mut splits = Vec::new();
        for split in self.selected_splits()? {
            for algo in self.algos.clone() {
                self.model(&split, algo)?;
            }
            self.labels()?;
            self.split_features(&split)?;
            let models: Vec<(String, &RouterModel)> = self
                .algos
                .iter()
                .map(|a| (a.to_string(), &self.models[&(split.name.clone(), *a)]))
                .collect();
            let inputs = SplitInputs {
                name: &split.name,
                labels: self.labels.as_ref().expect("labels set above"),
                train_ids: &split.train_ids,
                test_ids: &split.test_ids,
                features: &self.features[&split.name].by_query,
                no_retrieval_id: Some(&no_ret),
                selection: self.cfg.report.baseline_selection,
                bonferroni_m: self.cfg.report.bonferroni_m,
            };
            splits.push(evaluate_split(&inputs, &models)?);
        }
        Ok(EvalReport {
            metric: self.cfg.metric.to_string(),
            seed: self.cfg.seed,
            config_fingerprint: self.fingerprint.clone(),
            baseline_selection: self.cfg.report.baseline_selection,
            splits,
        })
    }

    fn stage_ingest(&mut self) -> Result<()> {
        self.load_inputs()?;
        let queries = self.queries.as_deref().unwrap_or_default();
        let mut query_types = BTreeMap::new();
        for q in queries {
            *query_types.entry(q.query_type.to_string()).or_insert(0) += 1;
        }
        let summary = IngestSummary {
            documents: self.docs.as_ref().map_or(0, Vec::len),
            queries: queries.len(),
            query_types,
        };
        self.write_tagged(Path::new("ingest.json"), summary)
    }

    fn stage_index(&mut self) -> Result<()> {
        let pool = self.pool()?;
        let idx = pool.bm25_index();
        let summary = IndexSummary {
            num_docs: idx.num_docs(),
            vocabulary_size: idx.vocabulary_size(),
            avg_doc_len: idx.avg_doc_len(),
            embedding_dim: pool.embedding_dim(),
            pool: pool.ids().iter().map(|s| s.to_string()).collect(),
        };
        self.write_tagged(Path::new("index.json"), summary)
    }

    fn stage_split(&mut self) -> Result<()> {
        let splits = self.all_splits()?.to_vec();
        self.write_tagged(Path::new("splits.json"), Splits { splits })
    }

    fn stage_features(&mut self) -> Result<()> {
        for split in self.selected_splits()? {
            self.split_features(&split)?;
            let sf = &self.features[&split.name];
            let queries = self.queries.as_deref().unwrap_or_default();
            let rows: Vec<FeatureVector> = queries
                .iter()
                .filter_map(|q| sf.by_query.get(&q.id))
                .flatten()
                .cloned()
                .collect();
            let pca = PcaArtifact {
                split: split.name.clone(),
                pca: sf.pca.clone(),
            };
            let (rows_rel, pca_rel) = Self::features_rel(&split.name);
            self.write_stamped(&rows_rel, &rows)?;
            self.write_tagged(&pca_rel, pca)?;
        }
        Ok(())
    }

    fn stage_label(&mut self) -> Result<()> {
        let records: Vec<UtilityRecord> = self.labels()?.records().cloned().collect();
        self.write_stamped(Path::new(LABELS_FILE), &records)
    }

    fn stage_train(&mut self) -> Result<()> {
        for split in self.selected_splits()? {
            for algo in self.algos.clone() {
                let rel = model_path(&split.name, algo);
                let model = self.model(&split, algo)?.clone();
                save_model(&self.path(&rel), &model)?;
                self.record_output(&rel);
            }
        }
        Ok(())
    }

    fn stage_route(&mut self) -> Result<()> {
        for split in self.selected_splits()? {
            for algo in self.algos.clone() {
                self.model(&split, algo)?;
                self.split_features(&split)?;
                let model = &self.models[&(split.name.clone(), algo)];
                let sf = &self.features[&split.name];
                let decisions = split
                    .test_ids
                    .iter()
                    .filter_map(|q| sf.by_query.get(q).map(|f| (q, f)))
                    .map(|(q, f)| route_learned(model, q, f))
                    .collect::<Result<Vec<RoutingDecision>>>()?;
                let rel = PathBuf::from("routes")
                    .join(split_slug(&split.name))
                    .join(format!("{algo}.jsonl"));
                self.write_stamped(&rel, &decisions)?;
            }
        }
        Ok(())
    }

    fn stage_eval(&mut self) -> Result<()> {
        let report = self.evaluate()?.clone();
        jsonl::write_json(&self.path(Path::new(REPORT_JSON)), &report)?;
        self.record_output(Path::new(REPORT_JSON));
        Ok(())
    }

    fn stage_report(&mut self) -> Result<()> {
        let rendered = render_report(self.evaluate()?)?;
        let tsv = format!("# config_fingerprint={}\n{}", self.fingerprint, rendered.tsv);
        jsonl::write_new(&self.path(Path::new(REPORT_TSV)), tsv.as_bytes())?;
        self.record_output(Path::new(REPORT_TSV));
        jsonl::write_new(&self.path(Path::new(REPORT_TXT)), rendered.grid.as_bytes())?;
        self.record_output(Path::new(REPORT_TXT));
        Ok(())
    }

    fn run_one(&mut self, stage: Stage) -> Result<()> {
        log::info!("stage {stage}");
        match stage {
            Stage::Ingest => self.stage_ingest(),
            Stage::Index => self.stage_index(),
            Stage::Split => self.stage_split(),
            Stage::Features => self.stage_features(),
            Stage::Label => self.stage_label(),
            Stage::Train => self.stage_train(),
            Stage::Route => self.stage_route(),
            Stage::Eval => self.stage_eval(),
            Stage::Report => self.stage_report(),
            Stage::Pipeline => {
                for s in &Stage::ALL[..Stage::ALL.len() - 1] {
                    self.run_one(*s)?;
                }
                Ok(())
            }
        }
    }

    /// Runs `stage` and writes `manifest.<stage>.json` listing its outputs.
    pub fn execute(&mut self, stage: Stage) -> Result<Manifest> {
        let manifest_rel = PathBuf::from(format!("manifest.{stage}.json"));
        let manifest_path = self.path(&manifest_rel);
        if manifest_path.exists() {
            return Err(Error::OutputExists(manifest_path));
        }
        self.written.clear();
        self.run_one(stage)?;
        let manifest = Manifest {
            command: stage.to_string(),
            config_fingerprint: self.fingerprint.clone(),
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            model_version: MODEL_VERSION,
            seeds: self.cfg.seeds(),
            algorithms: self.algos.iter().map(|a| a.to_string()).collect(),
            splits: self.cfg.split.schemes.clone(),
            outputs: std::mem::take(&mut self.written),
        };
        jsonl::write_json(&manifest_path, &manifest)?;
        Ok(manifest)
    }
}

/// Loads the config, runs `stage` and returns its manifest.
pub fn run_stage(cfg: RunConfig, stage: Stage) -> Result<Manifest> {
    Run::new(cfg)?.execute(stage)
}

/// Writes a demo corpus and query set as line-delimited files.
pub fn write_demo_inputs(dir: &Path, seed: u64) -> Result<(PathBuf, PathBuf)> {
    let data = crate::synth::demo_data(6, 12, 20, seed);
    let docs = dir.join("documents.jsonl");
    let queries = dir.join("queries.jsonl");
    jsonl::write_jsonl(&docs, &data.documents)?;
    jsonl::write_jsonl(&queries, &data.queries)?;
    Ok((docs, queries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Overrides;

    fn demo_config(dir: &Path, extra: &str) -> RunConfig {
        write_demo_inputs(dir, 3).unwrap();
        let text = format!(
            "seed = 3\npca_dim = 8\n{extra}\n[paths]\ndocuments = \"documents.jsonl\"\nqueries = \"queries.jsonl\"\noutput_dir = \"out\"\n\n[train]\nrounds = 20\n"
        );
        RunConfig::from_toml(&text, dir).unwrap()
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
        assert!(matches!("fit".parse::<Stage>(), Err(Error::Unknown { .. })));
    }

    #[test]
    fn slugs_are_path_safe() {
        assert_eq!(split_slug("unseen:open-ended"), "unseen-open-ended");
        assert_eq!(
            model_path("balanced", Algo::DEFAULT),
            PathBuf::from("models/balanced/pairwise-gbrt.json")
        );
    }

    #[test]
    fn stamped_records_flatten() {
        let s = Stamped {
            config_fingerprint: "ab".to_string(),
            record: UtilityRecord {
                query_id: "q".into(),
                retriever_id: "r".into(),
                utility: 0.5,
                delta: 0.25,
                delta_norm: 1.0,
            },
        };
        let line = serde_json::to_string(&s).unwrap();
        assert!(line.starts_with("{\"config_fingerprint\":\"ab\",\"query_id\":\"q\""));
        let back: Stamped<UtilityRecord> = serde_json::from_str(&line).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn standalone_train_writes_a_model() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = demo_config(dir.path(), "");
        let m = run_stage(cfg.clone(), Stage::Train).unwrap();
        assert_eq!(m.outputs, vec!["models/balanced/pairwise-gbrt.json"]);
        let model = load_model(&cfg.paths.output_dir.join(&m.outputs[0])).unwrap();
        assert_eq!(model.config_fingerprint, cfg.fingerprint().unwrap());
        assert!(matches!(run_stage(cfg, Stage::Train), Err(Error::OutputExists(_))));
    }

    #[test]
    fn eval_refuses_foreign_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = demo_config(dir.path(), "");
        run_stage(cfg.clone(), Stage::Label).unwrap();
        let mut other = cfg.clone();
        other.apply(&Overrides { seed: Some(4), ..Default::default() }, None).unwrap();
        match run_stage(other, Stage::Eval) {
            Err(Error::FingerprintMismatch { artifact, .. }) => assert!(artifact.ends_with(LABELS_FILE)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stages_reuse_earlier_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = demo_config(dir.path(), "algos = [\"pairwise-gbrt\", \"pointwise-linear\"]");
        for s in [Stage::Ingest, Stage::Index, Stage::Split, Stage::Features, Stage::Label, Stage::Train] {
            run_stage(cfg.clone(), s).unwrap();
        }
        let route = run_stage(cfg.clone(), Stage::Route).unwrap();
        assert_eq!(route.outputs.len(), 2);
        run_stage(cfg.clone(), Stage::Eval).unwrap();
        run_stage(cfg.clone(), Stage::Report).unwrap();
        let tsv = std::fs::read_to_string(cfg.paths.output_dir.join(REPORT_TSV)).unwrap();
        assert!(tsv.starts_with(&format!("# config_fingerprint={}\npolicy\tbalanced\n", cfg.fingerprint().unwrap())));
        assert!(tsv.contains("\npairwise-gbrt\t"));
        assert!(tsv.contains("\npointwise-linear\t"));

        let fresh = tempfile::tempdir().unwrap();
        let mut again = cfg.clone();
        again.paths.output_dir = fresh.path().to_path_buf();
        run_stage(again.clone(), Stage::Pipeline).unwrap();
        for f in [LABELS_FILE, REPORT_JSON, REPORT_TSV, "models/balanced/pairwise-gbrt.json"] {
            assert_eq!(
                std::fs::read(cfg.paths.output_dir.join(f)).unwrap(),
                std::fs::read(again.paths.output_dir.join(f)).unwrap(),
                "{f}"
            );
        }
    }
}
