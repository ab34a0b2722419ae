use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cosine, dot, mean_vector, median, normalized};
use crate::retrieval::EmbeddingVector;

pub const POST_FEATURE_NAMES: [&str; 6] = [
    "overall_sim",
    "avg_sim",
    "max_sim",
    "var_sim",
    "moran",
    "cross_ret_sim",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostFeatures {
    pub overall_sim: f64,
    pub avg_sim: f64,
    pub max_sim: f64,
    pub var_sim: f64,
    pub moran: f64,
    pub cross_ret_sim: f64,
}

impl PostFeatures {
    pub const LEN: usize = 6;

    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.overall_sim,
            self.avg_sim,
            self.max_sim,
            self.var_sim,
            self.moran,
            self.cross_ret_sim,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != Self::LEN {
            return Err(Error::LengthMismatch {
                expected: Self::LEN,
                actual: v.len(),
            });
        }
        Ok(PostFeatures {
            overall_sim: v[0],
            avg_sim: v[1],
            max_sim: v[2],
            var_sim: v[3],
            moran: v[4],
            cross_ret_sim: v[5],
        })
    }

    /// Similarities in [-1, 1], non-negative variance, everything finite.
    pub fn validate(&self) -> Result<()> {
        let v = self.to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite post feature in {self:?}")));
        }
        for (name, x) in [
            ("overall_sim", self.overall_sim),
            ("avg_sim", self.avg_sim),
            ("max_sim", self.max_sim),
            ("cross_ret_sim", self.cross_ret_sim),
        ] {
            if !(-1.0..=1.0).contains(&x) {
                return Err(Error::invalid(format!("{name} = {x} outside [-1, 1]")));
            }
        }
        if self.var_sim < 0.0 {
            return Err(Error::invalid(format!("var_sim = {} is negative", self.var_sim)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimStats {
    pub overall_sim: f64,
    pub avg_sim: f64,
    pub max_sim: f64,
    pub var_sim: f64,
}

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    if (dot(v, v).sqrt() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("{what} is not a unit vector")));
    }
    Ok(())
}

/// Query-to-document similarity statistics for one result set.
///
/// `var_sim` is the population variance of the per-document cosines.
pub fn post_retrieval_sims(query: &EmbeddingVector, docs: &[&[f64]]) -> Result<SimStats> {
    if docs.is_empty() {
        return Err(Error::invalid("post_retrieval_sims: no documents"));
    }
    if !query.unit {
        return Err(Error::invalid("post_retrieval_sims: query embedding is the zero sentinel"));
    }
    check_unit(&query.values, "query embedding")?;
    for d in docs {
        check_unit(d, "document embedding")?;
    }
    let sims: Vec<f64> = docs.iter().map(|d| cosine(&query.values, d)).collect();
    let n = sims.len() as f64;
    let avg = sims.iter().sum::<f64>() / n;
    let var = (sims.iter().map(|s| (s - avg).powi(2)).sum::<f64>() / n).max(0.0);
    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let agg = mean_vector(docs.iter().copied(), query.dim());
    let overall = normalized(&agg).map_or(0.0, |a| cosine(&query.values, &a));
    Ok(SimStats {
        overall_sim: overall,
        avg_sim: avg.clamp(-1.0, 1.0),
        max_sim: max,
        var_sim: var,
    })
}

/// Moran's I of the query-document scores over the document-similarity graph.
///
/// Weights are `max(0, cos(d_i, d_j))` off the diagonal and zero on it.
/// Returns 0 when the scores have no variance or the graph has no weight.
pub fn moran_coefficient(scores: &[f64], docs: &[&[f64]]) -> Result<f64> {
    let k = scores.len();
    if k < 2 {
        return Err(Error::invalid("moran_coefficient needs at least two documents"));
    }
    if docs.len() != k {
        return Err(Error::LengthMismatch { expected: k, actual: docs.len() });
    }
    let mean = scores.iter().sum::<f64>() / k as f64;
    let dev: Vec<f64> = scores.iter().map(|x| x - mean).collect();
    let denom: f64 = dev.iter().map(|d| d * d).sum();
    if denom <= 0.0 {
        return Ok(0.0);
    }
    let mut w_sum = 0.0;
    let mut num = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let w = cosine(docs[i], docs[j]).max(0.0);
            w_sum += w;
            num += w * dev[i] * dev[j];
        }
    }
    if w_sum <= 0.0 {
        return Ok(0.0);
    }
    Ok((k as f64 / w_sum) * num / denom)
}

/// Mean cosine between result set `i`'s aggregate embedding and every other's.
pub fn cross_ret_sim(aggregates: &[Vec<f64>], i: usize) -> Result<f64> {
    let m = aggregates.len();
    if m < 2 {
        return Err(Error::invalid("cross_ret_sim needs at least two result sets"));
    }
    if i >= m {
        return Err(Error::invalid(format!("cross_ret_sim index {i} out of range for {m}")));
    }
    let total: f64 = (0..m)
        .filter(|&j| j != i)
        .map(|j| cosine(&aggregates[i], &aggregates[j]))
        .sum();
    Ok((total / (m - 1) as f64).clamp(-1.0, 1.0))
}

/// Per-field medians of the training post features.
pub fn impute_no_retrieval(train: &[PostFeatures]) -> Result<PostFeatures> {
    if train.is_empty() {
        return Err(Error::invalid("median imputation needs training rows"));
    }
    let rows: Vec<Vec<f64>> = train.iter().map(PostFeatures::to_vec).collect();
    let medians: Vec<f64> = (0..PostFeatures::LEN)
        .map(|f| median(&rows.iter().map(|r| r[f]).collect::<Vec<_>>()))
        .collect();
    PostFeatures::from_slice(&medians)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(v: &[f64]) -> Vec<f64> {
        normalized(v).unwrap()
    }

    fn q(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector { values: unit(v), unit: true }
    }

    #[test]
    fn identical_vectors() {
        let e = unit(&[0.3, 0.4, 0.5]);
        let s = post_retrieval_sims(&q(&e), &[&e, &e, &e]).unwrap();
        assert!((s.overall_sim - 1.0).abs() < 1e-12);
        assert!((s.avg_sim - 1.0).abs() < 1e-12);
        assert!((s.max_sim - 1.0).abs() < 1e-12);
        assert!(s.var_sim.abs() < 1e-12);
    }

    #[test]
    fn two_point_statistics() {
        let query = q(&[1.0, 0.0, 0.0]);
        let d1 = [0.8, 0.6, 0.0];
        let d2 = [0.4, 0.0, (1.0f64 - 0.16).sqrt()];
        let s = post_retrieval_sims(&query, &[&d1, &d2]).unwrap();
        assert!((s.avg_sim - 0.6).abs() < 1e-12);
        assert!((s.max_sim - 0.8).abs() < 1e-12);
        assert!((s.var_sim - 0.04).abs() < 1e-12);
    }

    #[test]
    fn overall_sim_of_query_and_orthogonal_doc() {
        let query = q(&[1.0, 0.0]);
        let o = [0.0, 1.0];
        let s = post_retrieval_sims(&query, &[&query.values, &o]).unwrap();
        assert!((s.overall_sim - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn sims_reject_empty_and_sentinel() {
        assert!(post_retrieval_sims(&q(&[1.0, 0.0]), &[]).is_err());
        let zero = EmbeddingVector::zero(2);
        assert!(post_retrieval_sims(&zero, &[&[1.0, 0.0]]).is_err());
    }

    #[test]
    fn moran_degenerate_cases() {
        let a = unit(&[1.0, 0.2]);
        let b = unit(&[0.2, 1.0]);
        assert_eq!(moran_coefficient(&[0.5, 0.5], &[&a, &b]).unwrap(), 0.0);
        let x = [1.0, 0.0];
        let y = [-1.0, 0.0];
        assert_eq!(moran_coefficient(&[0.9, 0.1], &[&x, &y]).unwrap(), 0.0);
        assert!(moran_coefficient(&[0.9], &[&x]).is_err());
    }

    /// Brute-force evaluation of the formula, computed independently.
    const MORAN_THREE_DOCS: f64 = 0.017588043110337907;

    #[test]
    fn moran_three_document_regression() {
        let d1 = unit(&[1.0, 0.0, 0.0]);
        let d2 = unit(&[1.0, 1.0, 0.0]);
        let d3 = unit(&[0.0, 1.0, 1.0]);
        let i = moran_coefficient(&[0.9, 0.6, 0.2], &[&d1, &d2, &d3]).unwrap();
        assert!((i - MORAN_THREE_DOCS).abs() < 1e-9, "{i}");
    }

    #[test]
    fn cross_ret_examples() {
        let a = vec![1.0, 0.0];
        assert!((cross_ret_sim(&[a.clone(), a.clone()], 0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cross_ret_sim(&[a.clone(), vec![0.0, 1.0]], 0).unwrap(), 0.0);
        let b = vec![0.5, 0.75f64.sqrt()];
        let c = vec![0.1, 0.99f64.sqrt()];
        assert!((cross_ret_sim(&[a.clone(), b, c], 0).unwrap() - 0.3).abs() < 1e-12);
        assert!(cross_ret_sim(&[a], 0).is_err());
    }

    #[test]
    fn median_imputation() {
        let row = |x: f64| PostFeatures::from_slice(&[x; 6]).unwrap();
        assert_eq!(impute_no_retrieval(&[row(1.0), row(2.0), row(3.0)]).unwrap().avg_sim, 2.0);
        assert_eq!(impute_no_retrieval(&[row(1.0), row(2.0), row(3.0), row(4.0)]).unwrap().moran, 2.5);
        assert!(impute_no_retrieval(&[]).is_err());
    }

    proptest! {
        #[test]
        fn moran_is_shift_invariant(
            raw in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..7),
            scores in prop::collection::vec(-1.0f64..1.0, 7),
            shift in -5.0f64..5.0,
        ) {
            let docs: Vec<Vec<f64>> = raw.iter().map(|v| normalized(v).unwrap_or_else(|| vec![1.0, 0.0, 0.0])).collect();
            let refs: Vec<&[f64]> = docs.iter().map(Vec::as_slice).collect();
            let x = &scores[..docs.len()];
            let shifted: Vec<f64> = x.iter().map(|s| s + shift).collect();
            let a = moran_coefficient(x, &refs).unwrap();
            let b = moran_coefficient(&shifted, &refs).unwrap();
            prop_assert!((a - b).abs() < 1e-6 * (1.0 + a.abs()));
        }
    }
}
