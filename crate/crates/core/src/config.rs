//! Run configuration: one TOML file describing data paths, the retriever
//! pool, labeling, splits, training and reporting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::SplitScheme;
use crate::error::{Error, Result};
use crate::eval::BaselineSelection;
use crate::labels::UtilityMetric;
use crate::retrieval::{default_pool_specs, Reranker, RetrieverSpec};
use crate::text::derive_seed;
use crate::train::{Algo, TrainConfig};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "LTRR_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub documents: PathBuf,
    pub queries: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub schemes: Vec<String>,
    pub ratio: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            schemes: vec!["balanced".into()],
            ratio: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub baseline_selection: BaselineSelection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bonferroni_m: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_metric")]
    pub metric: UtilityMetric,
    /// Dimension of the built-in hashed embeddings; ignored when an
    /// embeddings file is given.
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_pca_dim")]
    pub pca_dim: usize,
    #[serde(default = "default_algos")]
    pub algos: Vec<String>,
    #[serde(default = "default_pool_specs")]
    pub pool: Vec<RetrieverSpec>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

fn default_k() -> usize {
    5
}
fn default_metric() -> UtilityMetric {
    UtilityMetric::ContextRecall
}
fn default_embedding_dim() -> usize {
    64
}
fn default_pca_dim() -> usize {
    32
}
fn default_algos() -> Vec<String> {
    vec![Algo::DEFAULT.to_string()]
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub algo: Option<String>,
    pub metric: Option<String>,
    pub split: Option<String>,
    pub k: Option<usize>,
    pub out: Option<PathBuf>,
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    /// Parses TOML; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .unwrap_or("config")
                .to_string();
            Error::Config {
                field,
                message: e.message().trim().to_string(),
            }
        })?;
        for p in [&mut cfg.paths.documents, &mut cfg.paths.queries, &mut cfg.paths.output_dir] {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        if let Some(p) = cfg.paths.embeddings.as_mut() {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Applies overrides. `env_out` is the value of [`OUT_DIR_ENV`], which
    /// ranks below `--out` and above the file.
    pub fn apply(&mut self, o: &Overrides, env_out: Option<PathBuf>) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(a) = &o.algo {
            self.algos = vec![a.clone()];
        }
        if let Some(m) = &o.metric {
            self.metric = m.parse()?;
        }
        if let Some(s) = &o.split {
            self.split.schemes = vec![s.clone()];
        }
        if let Some(k) = o.k {
            self.k = k;
        }
        if let Some(out) = o.out.clone().or(env_out) {
            self.paths.output_dir = out;
        }
        Ok(())
    }

    /// Checks every field; the first problem is reported by name.
    pub fn validate(&self) -> Result<()> {
        for (field, p) in [("paths.documents", &self.paths.documents), ("paths.queries", &self.paths.queries)] {
            if !p.is_file() {
                return Err(config_err(field, format!("{} does not exist", p.display())));
            }
        }
        if let Some(p) = &self.paths.embeddings {
            if !p.is_file() {
                return Err(config_err("paths.embeddings", format!("{} does not exist", p.display())));
            }
        }
        if self.k == 0 {
            return Err(config_err("k", "must be at least 1"));
        }
        if self.embedding_dim == 0 {
            return Err(config_err("embedding_dim", "must be at least 1"));
        }
        if self.pca_dim == 0 {
            return Err(config_err("pca_dim", "must be at least 1"));
        }
        if self.algos.is_empty() {
            return Err(config_err("algos", "list at least one algorithm"));
        }
        self.algorithms()?;
        if self.split.schemes.is_empty() {
            return Err(config_err("split.schemes", "list at least one scheme"));
        }
        self.split_schemes()?;
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            return Err(config_err("split.ratio", "must lie strictly between 0 and 1"));
        }
        if self.report.bonferroni_m == Some(0) {
            return Err(config_err("report.bonferroni_m", "must be at least 1"));
        }
        if self.pool.is_empty() {
            return Err(config_err("pool", "needs at least one retriever"));
        }
        if !self.pool.iter().any(|s| s.base == crate::retrieval::Base::None) {
            return Err(config_err("pool", "needs a no-retrieval option (base = \"none\")"));
        }
        self.train.validate()
    }

    pub fn algorithms(&self) -> Result<Vec<Algo>> {
        self.algos.iter().map(|a| a.parse()).collect()
    }

    pub fn split_schemes(&self) -> Result<Vec<SplitScheme>> {
        self.split.schemes.iter().map(|s| s.parse()).collect()
    }

    pub fn module_seed(&self, module: &str) -> u64 {
        derive_seed(self.seed, module)
    }

    /// Seeds used by every randomized stage, keyed by module name.
    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        out.insert("master".to_string(), self.seed);
        for m in ["embedding", "split", "pca", "train"] {
            out.insert(m.to_string(), self.module_seed(m));
        }
        for s in self.effective_pool() {
            if let Some(v) = s.params.get("seed") {
                out.insert(format!("rerank:{}", s.id), *v as u64);
            }
        }
        out
    }

    /// The pool with derived seeds filled in for stochastic rerankers that
    /// do not pin one.
    pub fn effective_pool(&self) -> Vec<RetrieverSpec> {
        self.pool
            .iter()
            .cloned()
            .map(|mut s| {
                if s.reranker == Reranker::Stochastic && !s.params.contains_key("seed") {
                    let seed = self.module_seed(&format!("rerank:{}", s.id)) >> 32;
                    s.params.insert("seed".into(), seed as f64);
                }
                s
            })
            .collect()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.module_seed("train"),
            ..self.train.clone()
        }
    }

    /// Short hash of everything that affects artifact contents, including
    /// the bytes of the input files. Selection lists (algorithms, split
    /// schemes) and the output location are left out so that partial runs
    /// share artifacts with full ones.
    pub fn fingerprint(&self) -> Result<String> {
        #[derive(Serialize)]
        struct View<'a> {
            seed: u64,
            k: usize,
            metric: UtilityMetric,
            embedding_dim: usize,
            pca_dim: usize,
            pool: Vec<RetrieverSpec>,
            ratio: f64,
            train: &'a TrainConfig,
            report: &'a ReportConfig,
            documents: String,
            queries: String,
            embeddings: Option<String>,
        }
        let view = View {
            seed: self.seed,
            k: self.k,
            metric: self.metric,
            embedding_dim: self.embedding_dim,
            pca_dim: self.pca_dim,
            pool: self.effective_pool(),
            ratio: self.split.ratio,
            train: &self.train,
            report: &self.report,
            documents: file_digest(&self.paths.documents)?,
            queries: file_digest(&self.paths.queries)?,
            embeddings: self.paths.embeddings.as_deref().map(file_digest).transpose()?,
        };
        let canon = serde_json::to_vec(&view).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(hex16(&Sha256::digest(&canon)))
    }
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex16(&Sha256::digest(&bytes)))
}

fn hex16(digest: &[u8]) -> String {
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
