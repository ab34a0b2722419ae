use serde::{Deserialize, Serialize};

use super::{bonferroni, wilcoxon_signed_rank, Baseline, BaselineSelection, PolicyScore};
use crate::error::{Error, Result};

/// Significance level for marking improvements over the baseline.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Oracle,
    BestStandard,
    TrainFree,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub name: String,
    pub kind: PolicyKind,
    pub mean: f64,
    pub per_query: Vec<f64>,
    /// Two-sided Wilcoxon p against the baseline, uncorrected.
    pub p_value: Option<f64>,
    pub corrected_p: Option<f64>,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEval {
    pub split: String,
    pub baseline_id: String,
    pub bonferroni_m: usize,
    pub policies: Vec<PolicyResult>,
}

impl SplitEval {
    pub fn policy(&self, name: &str) -> Option<&PolicyResult> {
        self.policies.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub seed: u64,
    pub config_fingerprint: String,
    pub baseline_selection: BaselineSelection,
    pub splits: Vec<SplitEval>,
}

/// Tests every compared policy against the baseline. `m` defaults to the
/// number of compared policies; the oracle is reported but not tested.
pub fn assess_split(
    split: &str,
    baseline: &Baseline,
    baseline_scores: PolicyScore,
    oracle: PolicyScore,
    compared: Vec<(String, PolicyKind, PolicyScore)>,
    m: Option<usize>,
) -> Result<SplitEval> {
    let m = m.unwrap_or(compared.len()).max(1);
    let mut policies = vec![
        PolicyResult {
            name: "oracle".into(),
            kind: PolicyKind::Oracle,
            mean: oracle.mean,
            per_query: oracle.per_query,
            p_value: None,
            corrected_p: None,
            significant: false,
        },
        PolicyResult {
            name: "best-standard".into(),
            kind: PolicyKind::BestStandard,
            mean: baseline_scores.mean,
            per_query: baseline_scores.per_query.clone(),
            p_value: None,
            corrected_p: None,
            significant: false,
        },
    ];
    for (name, kind, score) in compared {
        let w = wilcoxon_signed_rank(&score.per_query, &baseline_scores.per_query)?;
        let corrected = bonferroni(w.p_value, m);
        policies.push(PolicyResult {
            name,
            kind,
            significant: score.mean > baseline_scores.mean && corrected < ALPHA,
            mean: score.mean,
            per_query: score.per_query,
            p_value: Some(w.p_value),
            corrected_p: Some(corrected),
        });
    }
    Ok(SplitEval {
        split: split.to_string(),
        baseline_id: baseline.retriever_id.clone(),
        bonferroni_m: m,
        policies,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedReport {
    /// Tab-separated table, one row per policy and one column per split.
    pub tsv: String,
    /// Fixed-width text grid of the same table.
    pub grid: String,
}

fn cell(p: &PolicyResult) -> String {
    format!("{:.4}{}", p.mean, if p.significant { "*" } else { "" })
}

pub fn render_report(report: &EvalReport) -> Result<RenderedReport> {
    if report.splits.is_empty() || report.splits.iter().all(|s| s.policies.is_empty()) {
        return Err(Error::invalid("nothing to report"));
    }
    let mut names: Vec<&str> = Vec::new();
    for s in &report.splits {
        for p in &s.policies {
            if !names.contains(&p.name.as_str()) {
                names.push(&p.name);
            }
        }
    }
    let rows: Vec<Vec<String>> = names
        .iter()
        .map(|n| {
            report
                .splits
                .iter()
                .map(|s| s.policy(n).map_or_else(|| "-".to_string(), cell))
                .collect()
        })
        .collect();

    let mut tsv = String::from("policy");
    for s in &report.splits {
        tsv.push('\t');
        tsv.push_str(&s.split);
    }
    tsv.push('\n');
    for (n, r) in names.iter().zip(&rows) {
        tsv.push_str(n);
        for c in r {
            tsv.push('\t');
            tsv.push_str(c);
        }
        tsv.push('\n');
    }

    let w0 = names.iter().map(|n| n.len()).chain(["policy".len()]).max().unwrap_or(6);
    let widths: Vec<usize> = report.splits.iter().map(|s| s.split.len().max(8)).collect();
    let mut grid = format!("{:<w0$}", "policy");
    for (s, w) in report.splits.iter().zip(&widths) {
        grid.push_str(&format!("  {:>w$}", s.split));
    }
    grid.push('\n');
    grid.push_str(&"-".repeat(w0 + widths.iter().map(|w| w + 2).sum::<usize>()));
    grid.push('\n');
    for (n, r) in names.iter().zip(&rows) {
        grid.push_str(&format!("{n:<w0$}"));
        for (c, w) in r.iter().zip(&widths) {
            grid.push_str(&format!("  {c:>w$}"));
        }
        grid.push('\n');
    }
    grid.push('\n');
    for s in &report.splits {
        grid.push_str(&format!(
            "{}: best-standard = {}, Bonferroni m = {}\n",
            s.split, s.baseline_id, s.bonferroni_m
        ));
    }
    grid.push_str(&format!(
        "* above best-standard with corrected Wilcoxon p < {ALPHA}; metric = {}, seed = {}, config = {}\n",
        report.metric, report.seed, report.config_fingerprint
    ));
    Ok(RenderedReport { tsv, grid })
}
