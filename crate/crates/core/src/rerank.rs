//! Reranking of a retrieved candidate list: score regularization over the
//! document-similarity graph, and Plackett-Luce stochastic reranking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationParams {
    /// Similarities kept per row, diagonal included.
    pub m: usize,
    /// Diffusion steps.
    pub t: usize,
}

impl Default for RegularizationParams {
    fn default() -> Self {
        RegularizationParams { m: 5, t: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regularized {
    pub scores: Vec<f64>,
    /// Rows whose kept similarities were all non-positive and became self-loops.
    pub fallback_rows: Vec<usize>,
}

/// Row-stochastic neighbour matrix built from unit-norm document embeddings.
///
/// Each row of `W = D Dᵀ` keeps its `m` largest entries (ties to the lower
/// index), non-positive kept entries are zeroed, and the row is normalized to
/// sum to one.
pub fn neighbour_matrix(docs: &[Vec<f64>], m: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let k = docs.len();
    let mut fallback = Vec::new();
    let rows = (0..k)
        .map(|i| {
            let sims: Vec<f64> = docs.iter().map(|d| dot(&docs[i], d)).collect();
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
            let mut row = vec![0.0; k];
            for &j in order.iter().take(m) {
                if sims[j] > 0.0 {
                    row[j] = sims[j];
                }
            }
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|w| *w /= total);
            } else {
                log::warn!("regularization row {i} has no positive neighbours; using a self-loop");
                fallback.push(i);
                row = vec![0.0; k];
                row[i] = 1.0;
            }
            row
        })
        .collect();
    (rows, fallback)
}

/// Diffuses `scores` over the document graph: returns `Pᵗ s`.
pub fn regularize_scores(
    doc_embeddings: &[Vec<f64>],
    scores: &[f64],
    params: RegularizationParams,
) -> Result<Regularized> {
    let k = scores.len();
    if k == 0 {
        return Err(Error::invalid("regularize_scores needs at least one document"));
    }
    if doc_embeddings.len() != k {
        return Err(Error::LengthMismatch {
            expected: k,
            actual: doc_embeddings.len(),
        });
    }
    if params.m == 0 {
        return Err(Error::invalid("regularization m must be >= 1"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("regularize_scores: non-finite score"));
    }
    for (i, d) in doc_embeddings.iter().enumerate() {
        let norm = dot(d, d).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "regularize_scores: embedding row {i} has norm {norm}, expected 1"
            )));
        }
    }

    let (p, fallback_rows) = neighbour_matrix(doc_embeddings, params.m);
    let mut s = scores.to_vec();
    for _ in 0..params.t {
        s = p.iter().map(|row| dot(row, &s)).collect();
    }
    Ok(Regularized {
        scores: s,
        fallback_rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticParams {
    pub alpha: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for StochasticParams {
    fn default() -> Self {
        StochasticParams {
            alpha: 2.0,
            n_samples: 50,
            seed: 0,
        }
    }
}

/// Plackett-Luce weights `exp(alpha * z)` with `z` the standardized scores.
///
/// Scaled by `exp(-alpha * max z)` so the largest weight is 1; sampling
/// probabilities are unaffected.
pub fn plackett_luce_weights(scores: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("plackett_luce: non-finite score"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("plackett_luce: alpha {alpha} must be > 0")));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let z: Vec<f64> = if sd > 0.0 {
        scores.iter().map(|s| (s - mean) / sd).collect()
    } else {
        vec![0.0; scores.len()]
    };
    let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(z.iter().map(|zi| (alpha * (zi - zmax)).exp()).collect())
}

fn sample_ranking(weights: &[f64], rng: &mut impl Rng) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut ranking = Vec::with_capacity(weights.len());
    while !remaining.is_empty() {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (pos, &i) in remaining.iter().enumerate() {
            if u < weights[i] {
                pick = pos;
                break;
            }
            u -= weights[i];
        }
        ranking.push(remaining.remove(pick));
    }
    ranking
}

/// Draws `n_samples` Plackett-Luce rankings and returns one of them uniformly.
pub fn plackett_luce_rerank(scores: &[f64], params: StochasticParams) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::invalid("plackett_luce: empty score vector"));
    }
    if params.n_samples == 0 {
        return Err(Error::invalid("plackett_luce: n_samples must be >= 1"));
    }
    let weights = plackett_luce_weights(scores, params.alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut samples: Vec<Vec<usize>> = (0..params.n_samples)
        .map(|_| sample_ranking(&weights, &mut rng))
        .collect();
    let chosen = rng.random_range(0..samples.len());
    Ok(samples.swap_remove(chosen))
}
