use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

const MAX_ITERS: usize = 1000;
const TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `r` orthonormal rows, strongest direction first.
    pub basis: Vec<Vec<f64>>,
}

impl PcaModel {
    pub fn r(&self) -> usize {
        self.basis.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self.basis.iter().map(|b| dot(b, &centered)).collect())
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (coef, b) in z.iter().zip(&self.basis) {
            out.iter_mut().zip(b).for_each(|(o, bi)| *o += coef * bi);
        }
        out
    }
}

pub fn pca_project(model: &PcaModel, x: &[f64]) -> Result<Vec<f64>> {
    model.project(x)
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    // Two Gram-Schmidt passes keep the basis orthonormal to machine precision.
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, bi)| *x -= c * bi);
        }
    }
}

/// Top-`r` principal directions by power iteration with deflation.
///
/// Once the remaining variance is exhausted, the basis is completed with an
/// arbitrary orthonormal complement so that `r = dim` always yields a full
/// rotation.
pub fn pca_fit(vectors: &[Vec<f64>], r: usize, seed: u64) -> Result<PcaModel> {
    if r == 0 {
        return Err(Error::invalid("PCA target dimension must be positive"));
    }
    if vectors.len() < r {
        return Err(Error::invalid(format!(
            "PCA needs at least {r} samples, got {}",
            vectors.len()
        )));
    }
    let dim = vectors[0].len();
    if r > dim {
        return Err(Error::invalid(format!("PCA target {r} exceeds input dimension {dim}")));
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::LengthMismatch { expected: dim, actual: v.len() });
    }

    let n = vectors.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in vectors {
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x / n);
    }
    let mut cov = vec![vec![0.0; dim]; dim];
    for v in vectors {
        let c: Vec<f64> = v.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..dim {
            for j in i..dim {
                cov[i][j] += c[i] * c[j] / n;
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            cov[i][j] = cov[j][i];
        }
    }
    let scale: f64 = (0..dim).map(|i| cov[i][i]).sum::<f64>().max(f64::MIN_POSITIVE);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(r);
    while basis.len() < r {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        orthogonalize(&mut v, &basis);
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);

        let mut found = None;
        for _ in 0..MAX_ITERS {
            let mut w: Vec<f64> = cov.iter().map(|row| dot(row, &v)).collect();
            orthogonalize(&mut w, &basis);
            let nw = norm(&w);
            if nw <= 1e-12 * scale {
                break;
            }
            w.iter_mut().for_each(|x| *x /= nw);
            let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            v = w;
            found = Some(());
            if delta < TOL {
                break;
            }
        }
        if found.is_none() {
            v = complement_vector(&basis, dim);
        }
        if let Some(&lead) = v.iter().find(|x| x.abs() > 1e-9) {
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        basis.push(v);
    }
    Ok(PcaModel { mean, basis })
}

fn complement_vector(basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut best = (0.0, vec![0.0; dim]);
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        orthogonalize(&mut e, basis);
        let n = norm(&e);
        if n > best.0 {
            best = (n, e);
        }
        if n > 0.5 {
            break;
        }
    }
    let (n, mut e) = best;
    e.iter_mut().for_each(|x| *x /= n);
    e
}
