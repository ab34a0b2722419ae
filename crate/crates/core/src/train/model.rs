use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Algo, LinearScorer, TreeEnsembleScorer};
use crate::error::{Error, Result};
use crate::features::{FeatureVector, PcaModel, PostFeatures};
use crate::jsonl;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scorer {
    Linear(LinearScorer),
    Trees(TreeEnsembleScorer),
}

impl Scorer {
    fn score(&self, x: &[f64]) -> f64 {
        match self {
            Scorer::Linear(s) => s.score(x),
            Scorer::Trees(s) => s.score(x),
        }
    }
}

/// A trained scoring function with everything needed to score new options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterModel {
    pub version: u32,
    pub algo: Algo,
    pub scorer: Scorer,
    pub feature_len: usize,
    /// Post-block fill for options without retrieved documents.
    pub medians: Vec<f64>,
    /// Learned post block for the no-retrieval option, when trained.
    pub noret_vector: Option<Vec<f64>>,
    pub no_retrieval_id: Option<String>,
    pub pool_ids: Vec<String>,
    pub pca: Option<PcaModel>,
    pub config_fingerprint: String,
}

impl RouterModel {
    /// The dense input the scorer sees for one option.
    pub fn input(&self, fv: &FeatureVector) -> Result<Vec<f64>> {
        let post_len = fv.post.as_ref().map_or(PostFeatures::LEN, Vec::len);
        let actual = fv.pre.len() + post_len;
        if actual != self.feature_len || post_len != PostFeatures::LEN {
            return Err(Error::LengthMismatch {
                expected: self.feature_len,
                actual,
            });
        }
        let fill = match (&self.noret_vector, &self.no_retrieval_id) {
            (Some(v), Some(id)) if *id == fv.retriever_id => v,
            _ => &self.medians,
        };
        Ok(fv.dense(fill))
    }

    pub fn score(&self, fv: &FeatureVector) -> Result<f64> {
        Ok(self.scorer.score(&self.input(fv)?))
    }
}

/// Scores every option, in input order.
pub fn score_retrievers(model: &RouterModel, features: &[FeatureVector]) -> Result<Vec<f64>> {
    features.iter().map(|f| model.score(f)).collect()
}

pub fn save_model(path: &Path, model: &RouterModel) -> Result<()> {
    jsonl::write_json(path, model)
}

pub fn load_model(path: &Path) -> Result<RouterModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            expected: MODEL_VERSION,
            found,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
