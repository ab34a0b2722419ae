use std::collections::VecDeque;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainingSet};
use crate::error::{Error, Result};
use crate::features::PostFeatures;
use crate::linalg::dot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScorer {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearScorer {
    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

/// Dense rows in group order (missing post blocks filled with the training
/// medians) and their normalized gain labels.
pub(crate) fn dense_rows(data: &TrainingSet) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for o in data.groups.iter().flat_map(|g| &g.options) {
        let mut row = o.pre.clone();
        row.extend_from_slice(o.post.as_deref().unwrap_or(&data.medians));
        x.push(row);
        y.push(o.delta_norm);
    }
    (x, y)
}

/// Ridge regression with an unpenalized intercept. Returns the scorer and
/// its mean squared training residual.
pub(crate) fn fit_ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<(LinearScorer, f64)> {
    let n = x.len();
    let d = x[0].len();
    let xm: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let ym = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, d, |i, j| x[i][j] - xm[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ym));
    let mut a = xc.transpose() * &xc;
    for j in 0..d {
        a[(j, j)] += lambda;
    }
    let singular = || {
        Error::Singular(format!(
            "normal equations are not positive definite with ridge_lambda = {lambda}; use ridge_lambda > 0"
        ))
    };
    if lambda == 0.0 {
        let eig = a.clone().symmetric_eigen();
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 1e-10 * max.max(f64::MIN_POSITIVE)) {
            return Err(singular());
        }
    }
    let chol = a.cholesky().ok_or_else(singular)?;
    let w = chol.solve(&(xc.transpose() * yc));
    let weights: Vec<f64> = w.iter().copied().collect();
    let bias = ym - dot(&weights, &xm);
    let scorer = LinearScorer { weights, bias };
    let mse = x.iter().zip(y).map(|(r, t)| (scorer.score(r) - t).powi(2)).sum::<f64>() / n as f64;
    Ok((scorer, mse))
}

pub(crate) enum Objective<'a> {
    Pairwise(&'a [Vec<(usize, usize)>]),
    Listwise,
}

/// Parameters of a linear scorer whose no-retrieval post block is learned.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveParams {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub noret: Vec<f64>,
}

impl ObjectiveParams {
    fn flat(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.push(self.bias);
        v.extend_from_slice(&self.noret);
        v
    }

    /// `self + step * dir` with `dir` in `flat` layout.
    fn moved(&self, step: f64, dir: &[f64]) -> ObjectiveParams {
        let d = self.weights.len();
        ObjectiveParams {
            weights: self.weights.iter().zip(&dir[..d]).map(|(w, x)| w + step * x).collect(),
            bias: self.bias + step * dir[d],
            noret: self.noret.iter().zip(&dir[d + 1..]).map(|(v, x)| v + step * x).collect(),
        }
    }
}

struct Problem {
    rows: Vec<Vec<f64>>,
    noret: Vec<bool>,
    groups: Vec<Range<usize>>,
    labels: Vec<f64>,
    pre_len: usize,
}

impl Problem {
    fn new(data: &TrainingSet, rows: Vec<Vec<f64>>) -> Self {
        let mut noret = Vec::new();
        let mut groups = Vec::new();
        let mut labels = Vec::new();
        for g in &data.groups {
            let start = noret.len();
            for o in &g.options {
                noret.push(data.is_no_retrieval(&o.retriever_id));
                labels.push(o.delta_norm);
            }
            groups.push(start..noret.len());
        }
        Problem {
            rows,
            noret,
            groups,
            labels,
            pre_len: data.pre_len,
        }
    }

    fn scores(&self, p: &ObjectiveParams) -> Vec<f64> {
        let (w_pre, w_post) = p.weights.split_at(self.pre_len);
        self.rows
            .iter()
            .zip(&self.noret)
            .map(|(r, &nr)| {
                let post = if nr { &p.noret[..] } else { &r[self.pre_len..] };
                dot(w_pre, &r[..self.pre_len]) + dot(w_post, post) + p.bias
            })
            .collect()
    }

    /// Loss and gradient with respect to every row score.
    fn loss_and_score_grad(&self, obj: &Objective, s: &[f64]) -> (f64, Vec<f64>) {
        let mut ds = vec![0.0; s.len()];
        let mut loss = 0.0;
        match obj {
            Objective::Pairwise(pairs) => {
                let total: usize = pairs.iter().map(Vec::len).sum();
                let scale = 1.0 / total.max(1) as f64;
                for (g, gp) in self.groups.iter().zip(pairs.iter()) {
                    for &(i, j) in gp {
                        let (a, b) = (g.start + i, g.start + j);
                        let z = s[a] - s[b];
                        loss += softplus(-z) * scale;
                        let d = -sigmoid(-z) * scale;
                        ds[a] += d;
                        ds[b] -= d;
                    }
                }
            }
            Objective::Listwise => {
                let scale = 1.0 / self.groups.len().max(1) as f64;
                for g in &self.groups {
                    let p = softmax(&self.labels[g.clone()]);
                    let q = softmax(&s[g.clone()]);
                    loss += listnet_loss(&s[g.clone()], &self.labels[g.clone()]) * scale;
                    for (k, (pk, qk)) in p.iter().zip(&q).enumerate() {
                        ds[g.start + k] = (qk - pk) * scale;
                    }
                }
            }
        }
        (loss, ds)
    }

    fn objective(&self, obj: &Objective, p: &ObjectiveParams, ridge: f64, learn_noret: bool) -> (f64, ObjectiveParams) {
        let s = self.scores(p);
        let (mut loss, ds) = self.loss_and_score_grad(obj, &s);
        loss += 0.5 * ridge * dot(&p.weights, &p.weights);
        let mut gw: Vec<f64> = p.weights.iter().map(|w| ridge * w).collect();
        let mut gb = 0.0;
        let mut gv = vec![0.0; p.noret.len()];
        for ((r, &nr), &d) in self.rows.iter().zip(&self.noret).zip(&ds) {
            if d == 0.0 {
                continue;
            }
            gb += d;
            for j in 0..self.pre_len {
                gw[j] += d * r[j];
            }
            let post = if nr { &p.noret[..] } else { &r[self.pre_len..] };
            for (k, x) in post.iter().enumerate() {
                gw[self.pre_len + k] += d * x;
            }
            if nr && learn_noret {
                for (k, g) in gv.iter_mut().enumerate() {
                    *g += d * p.weights[self.pre_len + k];
                }
            }
        }
        (loss, ObjectiveParams { weights: gw, bias: gb, noret: gv })
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(x);
    x.iter().map(|v| (v - lse).exp()).collect()
}

/// Top-one cross-entropy `-sum P log Q` with `P = softmax(labels)` and
/// `Q = softmax(scores)`.
pub fn listnet_loss(scores: &[f64], labels: &[f64]) -> f64 {
    let p = softmax(labels);
    let lse = log_sum_exp(scores);
    -p.iter().zip(scores).map(|(pk, s)| pk * (s - lse)).sum::<f64>()
}

/// Mean per-query ListNet loss plus `ridge/2 |w|^2` on raw features, and its
/// gradient. Options of the no-retrieval retriever use `params.noret` as
/// their post block.
pub fn listwise_objective(data: &TrainingSet, params: &ObjectiveParams, ridge: f64) -> (f64, ObjectiveParams) {
    let (rows, _) = dense_rows(data);
    Problem::new(data, rows).objective(&Objective::Listwise, params, ridge, true)
}

const LBFGS_MEMORY: usize = 10;

/// Two-loop recursion; returns the quasi-Newton descent direction.
fn lbfgs_direction(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y) in memory.iter().rev() {
        let a = dot(s, &q) / dot(y, s);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for ((s, y), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = dot(y, &q) / dot(y, s);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter().map(|x| -x).collect()
}

/// Full-batch limited-memory quasi-Newton descent with backtracking on
/// standardized features. The loss history never increases.
pub(crate) fn fit_gradient(
    data: &TrainingSet,
    obj: Objective,
    cfg: &TrainConfig,
) -> Result<(LinearScorer, Option<Vec<f64>>, Vec<f64>)> {
    let (raw, _) = dense_rows(data);
    let d = data.feature_len();
    let n = raw.len();
    let mu: Vec<f64> = (0..d).map(|j| raw.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| {
            let v = raw.iter().map(|r| (r[j] - mu[j]).powi(2)).sum::<f64>() / n as f64;
            if v.sqrt() > 1e-12 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let rows: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| r.iter().enumerate().map(|(j, x)| (x - mu[j]) / sd[j]).collect())
        .collect();
    let problem = Problem::new(data, rows);
    let learn_noret = problem.noret.iter().any(|&b| b);

    let post_range = data.pre_len..d;
    let mut params = ObjectiveParams {
        weights: vec![0.0; d],
        bias: 0.0,
        noret: data
            .medians
            .iter()
            .zip(post_range.clone())
            .map(|(m, j)| (m - mu[j]) / sd[j])
            .collect(),
    };
    let (mut loss, mut grad) = problem.objective(&obj, &params, cfg.ridge_lambda, learn_noret);
    let mut history = vec![loss];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    for _ in 0..cfg.epochs {
        let g = grad.flat();
        let gsq = dot(&g, &g);
        if gsq < 1e-20 {
            break;
        }
        let mut dir = lbfgs_direction(&g, &memory);
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            memory.clear();
            dir = g.iter().map(|x| -x).collect();
            slope = -gsq;
        }
        let mut step = if memory.is_empty() { cfg.step_size } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let cand = params.moved(step, &dir);
            let (l, cg) = problem.objective(&obj, &cand, cfg.ridge_lambda, learn_noret);
            if l.is_finite() && l <= loss + 1e-4 * step * slope {
                accepted = Some((cand, l, cg));
                break;
            }
            step *= 0.5;
        }
        let Some((p, l, g_new)) = accepted else { break };
        let s_vec: Vec<f64> = p.flat().iter().zip(params.flat()).map(|(a, b)| a - b).collect();
        let y_vec: Vec<f64> = g_new.flat().iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s_vec, &y_vec) > 1e-12 {
            if memory.len() == LBFGS_MEMORY {
                memory.pop_front();
            }
            memory.push_back((s_vec, y_vec));
        }
        params = p;
        loss = l;
        grad = g_new;
        history.push(loss);
    }

    let weights: Vec<f64> = params.weights.iter().zip(&sd).map(|(w, s)| w / s).collect();
    let bias = params.bias - params.weights.iter().zip(mu.iter().zip(&sd)).map(|(w, (m, s))| w * m / s).sum::<f64>();
    let noret = learn_noret.then(|| {
        params
            .noret
            .iter()
            .zip(post_range)
            .map(|(v, j)| v * sd[j] + mu[j])
            .collect::<Vec<f64>>()
    });
    debug_assert!(noret.as_ref().is_none_or(|v| v.len() == PostFeatures::LEN));
    Ok((LinearScorer { weights, bias }, noret, history))
}
