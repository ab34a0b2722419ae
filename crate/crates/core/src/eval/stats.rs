use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of non-zero differences handled by exact enumeration.
pub const EXACT_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)` over the non-zero differences.
    pub statistic: f64,
    pub p_value: f64,
    /// Number of non-zero differences.
    pub n: usize,
    pub exact: bool,
    /// Every difference was zero.
    pub degenerate: bool,
}

/// Mid-ranks of `values` (1-based), doubled so they are integers.
fn doubled_mid_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j share rank ((i+1) + (j+1)) / 2.
        let doubled = (i + 1 + j + 1) as u64;
        for &o in &order[i..=j] {
            ranks[o] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Paired two-sided Wilcoxon signed-rank test on `x - y`.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::invalid("wilcoxon test needs at least one pair"));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            n: 0,
            exact: true,
            degenerate: true,
        });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = doubled_mid_ranks(&abs);
    let total: u64 = ranks.iter().sum();
    let w_plus: u64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let statistic = w_plus.min(total - w_plus) as f64 / 2.0;

    if n <= EXACT_LIMIT {
        // counts[s] = number of sign assignments with doubled W+ = s.
        let mut counts = vec![0u64; total as usize + 1];
        counts[0] = 1;
        for &r in &ranks {
            for s in (r as usize..counts.len()).rev() {
                counts[s] += counts[s - r as usize];
            }
        }
        let observed = (2 * w_plus).abs_diff(total);
        let extreme: u64 = counts
            .iter()
            .enumerate()
            .filter(|(s, _)| (2 * *s as u64).abs_diff(total) >= observed)
            .map(|(_, c)| c)
            .sum();
        let p = extreme as f64 / (1u64 << n) as f64;
        return Ok(WilcoxonResult {
            statistic,
            p_value: p.min(1.0),
            n,
            exact: true,
            degenerate: false,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_unstable();
    for chunk in sorted.chunk_by(|a, b| a == b) {
        let t = chunk.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let w = w_plus as f64 / 2.0;
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let p = libm::erfc(z / std::f64::consts::SQRT_2);
    Ok(WilcoxonResult {
        statistic,
        p_value: p.clamp(0.0, 1.0),
        n,
        exact: false,
        degenerate: false,
    })
}

/// Bonferroni-corrected p-value `min(1, m p)` for a family of `m >= 1` tests.
pub fn bonferroni(p: f64, m: usize) -> f64 {
    (m.max(1) as f64 * p).min(1.0)
}

/// Kendall rank correlation between two orderings of the same ids.
pub fn kendall_tau<S: AsRef<str>>(a: &[S], b: &[S]) -> Result<f64> {
    let mut sa: Vec<&str> = a.iter().map(AsRef::as_ref).collect();
    let mut sb: Vec<&str> = b.iter().map(AsRef::as_ref).collect();
    sa.sort_unstable();
    sb.sort_unstable();
    if sa != sb || sa.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("kendall tau needs two permutations of the same ids"));
    }
    let n = a.len();
    if n < 2 {
        return Ok(1.0);
    }
    let pos_b: std::collections::HashMap<&str, usize> =
        b.iter().enumerate().map(|(i, s)| (s.as_ref(), i)).collect();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            if pos_b[a[i].as_ref()] < pos_b[a[j].as_ref()] {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    Ok((concordant - discordant) as f64 / (n * (n - 1) / 2) as f64)
}
