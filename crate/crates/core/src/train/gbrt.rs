use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainingSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

/// Binary regression tree stored as a node array rooted at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf { value } = n {
                *value *= factor;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleScorer {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
}

impl TreeEnsembleScorer {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

struct TreeParams {
    max_depth: usize,
    lambda: f64,
    min_child_weight: f64,
}

/// Second-order tree fit with exact greedy splits over presorted columns.
struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    sorted: Vec<Vec<usize>>,
    params: TreeParams,
}

impl<'a> TreeBuilder<'a> {
    fn new(x: &'a [Vec<f64>], params: TreeParams) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let sorted = (0..d)
            .map(|j| {
                let mut idx: Vec<usize> = (0..x.len()).collect();
                idx.sort_by(|&a, &b| x[a][j].total_cmp(&x[b][j]).then(a.cmp(&b)));
                idx
            })
            .collect();
        TreeBuilder { x, sorted, params }
    }

    fn fit(&self, g: &[f64], h: &[f64]) -> RegressionTree {
        let mut nodes = Vec::new();
        let member = vec![true; self.x.len()];
        self.grow(&mut nodes, &member, g, h, 0);
        RegressionTree { nodes }
    }

    fn leaf_value(&self, gs: f64, hs: f64) -> f64 {
        let denom = hs + self.params.lambda;
        if denom > 0.0 {
            -gs / denom
        } else {
            0.0
        }
    }

    fn grow(&self, nodes: &mut Vec<Node>, member: &[bool], g: &[f64], h: &[f64], depth: usize) -> usize {
        let id = nodes.len();
        let (gs, hs) = member
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .fold((0.0, 0.0), |(a, b), (i, _)| (a + g[i], b + h[i]));
        nodes.push(Node::Leaf {
            value: self.leaf_value(gs, hs),
        });
        if depth >= self.params.max_depth {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(member, g, h, gs, hs) else {
            return id;
        };
        let left_member: Vec<bool> = member
            .iter()
            .enumerate()
            .map(|(i, &m)| m && self.x[i][feature] <= threshold)
            .collect();
        let right_member: Vec<bool> = member
            .iter()
            .zip(&left_member)
            .map(|(&m, &l)| m && !l)
            .collect();
        let left = self.grow(nodes, &left_member, g, h, depth + 1);
        let right = self.grow(nodes, &right_member, g, h, depth + 1);
        nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&self, member: &[bool], g: &[f64], h: &[f64], gs: f64, hs: f64) -> Option<(usize, f64)> {
        let lambda = self.params.lambda;
        let mcw = self.params.min_child_weight;
        let parent = gs * gs / (hs + lambda);
        let mut best: Option<(f64, usize, f64)> = None;
        for (j, order) in self.sorted.iter().enumerate() {
            let rows: Vec<usize> = order.iter().copied().filter(|&i| member[i]).collect();
            let (mut gl, mut hl) = (0.0, 0.0);
            for w in rows.windows(2) {
                let (a, b) = (w[0], w[1]);
                gl += g[a];
                hl += h[a];
                let (va, vb) = (self.x[a][j], self.x[b][j]);
                if va >= vb {
                    continue;
                }
                let (gr, hr) = (gs - gl, hs - hl);
                if hl < mcw || hr < mcw {
                    continue;
                }
                let gain = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent);
                if gain > 1e-12 && best.is_none_or(|(bg, _, _)| gain > bg) {
                    let mid = va + (vb - va) / 2.0;
                    let threshold = if mid < vb { mid } else { va };
                    best = Some((gain, j, threshold));
                }
            }
        }
        best.map(|(_, j, t)| (j, t))
    }
}

fn tree_params(cfg: &TrainConfig) -> TreeParams {
    TreeParams {
        max_depth: cfg.tree_depth,
        lambda: cfg.tree_lambda,
        min_child_weight: cfg.min_child_weight,
    }
}

/// Adds one Newton tree, halving its contribution until the loss does not
/// increase; a tree that cannot help is dropped.
fn boost<L>(x: &[Vec<f64>], cfg: &TrainConfig, base: f64, mut grad_hess: impl FnMut(&[f64]) -> (Vec<f64>, Vec<f64>), loss: L) -> (TreeEnsembleScorer, Vec<f64>)
where
    L: Fn(&[f64]) -> f64,
{
    let builder = TreeBuilder::new(x, tree_params(cfg));
    let mut f = vec![base; x.len()];
    let mut current = loss(&f);
    let mut history = vec![current];
    let mut trees = Vec::new();
    for _ in 0..cfg.rounds {
        let (g, h) = grad_hess(&f);
        let mut tree = builder.fit(&g, &h);
        let pred: Vec<f64> = x.iter().map(|r| tree.predict(r)).collect();
        let mut factor = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let cand: Vec<f64> = f
                .iter()
                .zip(&pred)
                .map(|(fi, p)| fi + cfg.learning_rate * factor * p)
                .collect();
            let l = loss(&cand);
            if l <= current {
                accepted = Some((cand, l));
                break;
            }
            factor *= 0.5;
        }
        if let Some((cand, l)) = accepted {
            if factor != 1.0 {
                tree.scale(factor);
            }
            trees.push(tree);
            f = cand;
            current = l;
        }
        history.push(current);
    }
    (
        TreeEnsembleScorer {
            base_score: base,
            learning_rate: cfg.learning_rate,
            trees,
        },
        history,
    )
}

/// Squared loss; the base score is the label mean.
pub(crate) fn boost_squared(x: &[Vec<f64>], y: &[f64], cfg: &TrainConfig) -> (TreeEnsembleScorer, Vec<f64>) {
    let base = y.iter().sum::<f64>() / y.len() as f64;
    let n = y.len() as f64;
    boost(
        x,
        cfg,
        base,
        |f| (f.iter().zip(y).map(|(fi, yi)| fi - yi).collect(), vec![1.0; f.len()]),
        |f| f.iter().zip(y).map(|(fi, yi)| 0.5 * (fi - yi).powi(2)).sum::<f64>() / n,
    )
}

/// Logistic pairwise loss; gradients and hessians accumulate per row over
/// every pair it takes part in.
pub(crate) fn boost_pairwise(
    x: &[Vec<f64>],
    data: &TrainingSet,
    pairs: &[Vec<(usize, usize)>],
    cfg: &TrainConfig,
) -> (TreeEnsembleScorer, Vec<f64>) {
    let mut flat = Vec::new();
    let mut offset = 0;
    for (g, gp) in data.groups.iter().zip(pairs) {
        flat.extend(gp.iter().map(|&(i, j)| (offset + i, offset + j)));
        offset += g.options.len();
    }
    let total = flat.len() as f64;
    let flat = &flat;
    boost(
        x,
        cfg,
        0.0,
        |f| {
            let mut g = vec![0.0; f.len()];
            let mut h = vec![0.0; f.len()];
            for &(w, l) in flat {
                let z = f[w] - f[l];
                let p = 1.0 / (1.0 + z.exp());
                g[w] -= p;
                g[l] += p;
                h[w] += p * (1.0 - p);
                h[l] += p * (1.0 - p);
            }
            (g, h)
        },
        |f| {
            flat.iter()
                .map(|&(w, l)| {
                    let z = f[w] - f[l];
                    if z > 0.0 {
                        (-z).exp().ln_1p()
                    } else {
                        -z + z.exp().ln_1p()
                    }
                })
                .sum::<f64>()
                / total
        },
    )
}
