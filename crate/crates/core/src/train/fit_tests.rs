use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::features::FeatureVector;

const IDS: [&str; 4] = ["a", "b", "c", "none"];

/// Queries with three pre features and a gain driven by the post block.
fn set(n: usize, seed: u64, gain: impl Fn(&[f64], &[f64]) -> f64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = (0..n)
        .map(|q| {
            let pre: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut deltas = Vec::new();
            let mut posts = Vec::new();
            for id in IDS {
                if id == "none" {
                    posts.push(None);
                    deltas.push(0.0);
                } else {
                    let post: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
                    deltas.push(gain(&pre, &post));
                    posts.push(Some(post));
                }
            }
            let norm = crate::labels::min_max_normalize(&deltas);
            QueryGroup {
                query_id: format!("q{q}"),
                options: IDS
                    .iter()
                    .zip(posts)
                    .zip(deltas.iter().zip(norm))
                    .map(|((id, post), (&delta, delta_norm))| TrainOption {
                        retriever_id: id.to_string(),
                        pre: pre.clone(),
                        post,
                        delta,
                        delta_norm,
                    })
                    .collect(),
            }
        })
        .collect();
    TrainingSet::new(groups, IDS.map(String::from).to_vec(), Some("none".into())).unwrap()
}

fn default_set() -> TrainingSet {
    set(40, 3, |pre, post| post[0] - 0.5 * post[3] + 0.2 * pre[0] - 0.25)
}

fn fv(o: &TrainOption) -> FeatureVector {
    FeatureVector {
        query_id: String::new(),
        retriever_id: o.retriever_id.clone(),
        pre: o.pre.clone(),
        post: o.post.clone(),
    }
}

fn non_increasing(h: &[f64]) -> bool {
    h.windows(2).all(|w| w[1] <= w[0])
}

#[test]
fn ridge_recovers_planted_linear_model() {
    let w_true = [0.3, -0.7, 0.2, 1.5, 0.0, -0.4, 0.8, 0.1, -1.1];
    let mut data = set(30, 11, |_, _| 0.0);
    for g in &mut data.groups {
        for o in &mut g.options {
            let x = o.post.as_ref().map(|p| [o.pre.clone(), p.clone()].concat());
            o.delta_norm = x.map_or(0.0, |x| dot_arr(&w_true, &x) + 0.25);
        }
        g.options.retain(|o| o.post.is_some());
    }
    let cfg = TrainConfig { ridge_lambda: 0.0, ..TrainConfig::default() };
    let t = train_pointwise(&data, Learner::Linear, &cfg, ModelMeta::default()).unwrap();
    let super::model::Scorer::Linear(lin) = &t.model.scorer else { panic!() };
    for (a, b) in lin.weights.iter().zip(w_true) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
    assert!((lin.bias - 0.25).abs() < 1e-8);
}

fn dot_arr(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn zero_ridge_on_collinear_features_is_singular() {
    let mut data = default_set();
    for o in data.groups.iter_mut().flat_map(|g| &mut g.options) {
        o.pre[1] = o.pre[0];
    }
    let cfg = TrainConfig { ridge_lambda: 0.0, ..TrainConfig::default() };
    let err = train_pointwise(&data, Learner::Linear, &cfg, ModelMeta::default()).unwrap_err();
    assert!(matches!(err, Error::Singular(_)), "{err}");
    assert!(err.to_string().contains("ridge_lambda > 0"));
    let cfg = TrainConfig { ridge_lambda: 0.1, ..TrainConfig::default() };
    assert!(train_pointwise(&data, Learner::Linear, &cfg, ModelMeta::default()).is_ok());
}

#[test]
fn constant_labels_give_constant_pointwise_predictions() {
    let mut data = default_set();
    for o in data.groups.iter_mut().flat_map(|g| &mut g.options) {
        o.delta_norm = 0.5;
    }
    for learner in [Learner::Linear, Learner::Gbrt] {
        let t = train_pointwise(&data, learner, &TrainConfig::default(), ModelMeta::default()).unwrap();
        for o in data.groups.iter().flat_map(|g| &g.options) {
            let s = t.model.score(&fv(o)).unwrap();
            assert!((s - 0.5).abs() < 1e-9, "{learner:?} {s}");
        }
    }
}

#[test]
fn zero_rounds_predicts_label_mean() {
    let data = default_set();
    let cfg = TrainConfig { rounds: 0, ..TrainConfig::default() };
    let t = train_pointwise(&data, Learner::Gbrt, &cfg, ModelMeta::default()).unwrap();
    let labels: Vec<f64> = data.groups.iter().flat_map(|g| &g.options).map(|o| o.delta_norm).collect();
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;
    let o = &data.groups[0].options[0];
    assert!((t.model.score(&fv(o)).unwrap() - mean).abs() < 1e-12);
}

#[test]
fn losses_never_increase() {
    let data = default_set();
    let cfg = TrainConfig { epochs: 60, rounds: 40, ..TrainConfig::default() };
    for algo in Algo::SUPPORTED {
        let t = train(algo, &data, &cfg, ModelMeta::default()).unwrap();
        assert!(non_increasing(&t.loss_history), "{algo}: {:?}", t.loss_history);
        let first = t.loss_history[0];
        let last = *t.loss_history.last().unwrap();
        if algo.loss != LossFamily::Pointwise || algo.learner == Learner::Gbrt {
            assert!(last < first, "{algo} made no progress");
        }
    }
}

#[test]
fn trained_rankers_order_options_by_gain() {
    let data = default_set();
    for algo in Algo::SUPPORTED {
        let t = train(algo, &data, &TrainConfig::default(), ModelMeta::default()).unwrap();
        let mut agree = 0;
        let mut total = 0;
        for g in &data.groups {
            for w in &g.options {
                for l in &g.options {
                    if w.delta > l.delta + 0.1 {
                        total += 1;
                        if t.model.score(&fv(w)).unwrap() > t.model.score(&fv(l)).unwrap() {
                            agree += 1;
                        }
                    }
                }
            }
        }
        assert!(agree as f64 > 0.85 * total as f64, "{algo}: {agree}/{total}");
    }
}

#[test]
fn no_pairs_is_an_error() {
    let mut data = default_set();
    for o in data.groups.iter_mut().flat_map(|g| &mut g.options) {
        o.delta = 0.1;
    }
    for learner in [Learner::Linear, Learner::Gbrt] {
        let err = train_pairwise(&data, learner, &TrainConfig::default(), ModelMeta::default()).unwrap_err();
        assert!(err.to_string().contains("no preference pairs"));
    }
}

#[test]
fn swapped_preferences_negate_linear_score_differences() {
    let data = default_set();
    let mut swapped = data.clone();
    for o in swapped.groups.iter_mut().flat_map(|g| &mut g.options) {
        o.delta = -o.delta;
    }
    let cfg = TrainConfig { epochs: 50, ..TrainConfig::default() };
    let a = train_pairwise(&data, Learner::Linear, &cfg, ModelMeta::default()).unwrap();
    let b = train_pairwise(&swapped, Learner::Linear, &cfg, ModelMeta::default()).unwrap();
    for g in &data.groups {
        let sa: Vec<f64> = g.options.iter().map(|o| a.model.score(&fv(o)).unwrap()).collect();
        let sb: Vec<f64> = g.options.iter().map(|o| b.model.score(&fv(o)).unwrap()).collect();
        for i in 1..sa.len() {
            let (da, db) = (sa[i] - sa[0], sb[i] - sb[0]);
            assert!((da + db).abs() < 1e-6 * (1.0 + da.abs()), "{da} {db}");
        }
    }
}

#[test]
fn listnet_loss_of_uniform_lists_is_log_m() {
    let l = listnet_loss(&[0.3; 7], &[0.5; 7]);
    assert!((l - 7f64.ln()).abs() < 1e-12);
    assert!(listnet_loss(&[3.0, 0.0, -1.0], &[1.0, 0.0, 0.0]) >= 0.0);
}

#[test]
fn listwise_gradient_matches_finite_differences() {
    let data = default_set();
    let d = data.feature_len();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = ObjectiveParams {
        weights: (0..d).map(|_| rng.random_range(-0.5..0.5)).collect(),
        bias: 0.1,
        noret: (0..6).map(|_| rng.random_range(0.0..1.0)).collect(),
    };
    let ridge = 0.01;
    let (_, grad) = listwise_objective(&data, &params, ridge);
    let h = 1e-6;
    let f = |p: &ObjectiveParams| listwise_objective(&data, p, ridge).0;
    for j in 0..d {
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus.weights[j] += h;
        minus.weights[j] -= h;
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        assert!((fd - grad.weights[j]).abs() < 1e-5 * (1.0 + fd.abs()), "w{j}: {fd} vs {}", grad.weights[j]);
    }
    for k in 0..6 {
        let mut plus = params.clone();
        let mut minus = params.clone();
        plus.noret[k] += h;
        minus.noret[k] -= h;
        let fd = (f(&plus) - f(&minus)) / (2.0 * h);
        assert!((fd - grad.noret[k]).abs() < 1e-5 * (1.0 + fd.abs()), "v{k}: {fd} vs {}", grad.noret[k]);
    }
}

#[test]
fn learned_no_retrieval_vector_is_used_for_the_no_retrieval_option() {
    let data = default_set();
    let t = train(
        Algo { loss: LossFamily::Listwise, learner: Learner::Linear },
        &data,
        &TrainConfig::default(),
        ModelMeta::default(),
    )
    .unwrap();
    let v = t.model.noret_vector.clone().expect("learned vector");
    assert_ne!(v, data.medians);
    let o = data.groups[0].options.iter().find(|o| o.retriever_id == "none").unwrap();
    let x = t.model.input(&fv(o)).unwrap();
    assert_eq!(&x[3..], &v[..]);

    let g = train(Algo::DEFAULT, &data, &TrainConfig::default(), ModelMeta::default()).unwrap();
    assert!(g.model.noret_vector.is_none());
    assert_eq!(&g.model.input(&fv(o)).unwrap()[3..], &data.medians[..]);
}

#[test]
fn model_round_trips_and_checks_version_and_length() {
    let data = default_set();
    let dir = tempfile::tempdir().unwrap();
    for algo in Algo::SUPPORTED {
        let t = train(algo, &data, &TrainConfig::default(), ModelMeta::default()).unwrap();
        let path = dir.path().join(format!("{algo}.json"));
        save_model(&path, &t.model).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, t.model);
        let feats: Vec<FeatureVector> = data.groups[0].options.iter().map(fv).collect();
        let a = score_retrievers(&t.model, &feats).unwrap();
        let b = score_retrievers(&back, &feats).unwrap();
        assert_eq!(a, b);
    }
    let t = train(Algo::DEFAULT, &data, &TrainConfig::default(), ModelMeta::default()).unwrap();
    let mut bad = fv(&data.groups[0].options[0]);
    bad.pre.push(1.0);
    let err = t.model.score(&bad).unwrap_err().to_string();
    assert!(err.contains("expected 9") && err.contains("got 10"), "{err}");

    let mut old = serde_json::to_value(&t.model).unwrap();
    old["version"] = 0.into();
    let path = dir.path().join("old.json");
    std::fs::write(&path, old.to_string()).unwrap();
    assert!(matches!(load_model(&path), Err(Error::VersionMismatch { found: 0, .. })));
    std::fs::write(&path, "{ not json").unwrap();
    assert!(matches!(load_model(&path), Err(Error::Parse(_))));
}

#[test]
fn pair_cap_is_deterministic() {
    let data = default_set();
    let g = &data.groups[0];
    let a = group_pairs(g, Some(2), 9);
    assert_eq!(a.len(), 2);
    assert_eq!(a, group_pairs(g, Some(2), 9));
}

fn pair_accuracy(model: &RouterModel, data: &TrainingSet) -> (usize, usize) {
    let mut right = 0;
    let mut total = 0;
    for g in &data.groups {
        for w in &g.options {
            for l in &g.options {
                if w.delta > l.delta {
                    total += 1;
                    if model.score(&fv(w)).unwrap() > model.score(&fv(l)).unwrap() {
                        right += 1;
                    }
                }
            }
        }
    }
    (right, total)
}

#[test]
fn pairwise_linear_separates_separable_pairs() {
    let data = set(30, 17, |_, post| 0.1 + post[0] - post[2]);
    let cfg = TrainConfig { ridge_lambda: 0.0, epochs: 3000, ..TrainConfig::default() };
    let t = train_pairwise(&data, Learner::Linear, &cfg, ModelMeta::default()).unwrap();
    let (right, total) = pair_accuracy(&t.model, &data);
    assert_eq!(right, total);
}

#[test]
fn single_pair_is_satisfied() {
    let mut data = set(1, 2, |_, post| post[1]);
    data.groups[0].options.retain(|o| o.retriever_id == "a" || o.retriever_id == "b");
    let t = train_pairwise(&data, Learner::Linear, &TrainConfig::default(), ModelMeta::default()).unwrap();
    assert_eq!(pair_accuracy(&t.model, &data), (1, 1));
}

#[test]
fn pairwise_inversions_vanish_with_many_pairs() {
    let gain = |_: &[f64], post: &[f64]| 0.6 * post[0] - 0.3 * post[1] + 0.2 * post[4] - 0.1;
    let train_set = set(1700, 21, gain);
    let pairs: usize = train_set.groups.iter().map(|g| group_pairs(g, None, 0).len()).sum();
    assert!(pairs >= 10_000, "{pairs}");
    let test_set = set(500, 22, gain);
    let t = train_pairwise(&train_set, Learner::Linear, &TrainConfig::default(), ModelMeta::default()).unwrap();
    let (right, total) = pair_accuracy(&t.model, &test_set);
    let inversion = 1.0 - right as f64 / total as f64;
    assert!(inversion < 0.02, "{inversion}");
}

#[test]
fn linear_scores_probe_weights() {
    let lin = LinearScorer { weights: vec![0.5, -1.0, 2.0], bias: 0.25 };
    for j in 0..3 {
        let mut e = vec![0.0; 3];
        e[j] = 1.0;
        assert_eq!(lin.score(&e), lin.weights[j] + 0.25);
    }
    let x = [0.3, 0.0, 0.7];
    let mut doubled = lin.clone();
    doubled.weights[2] *= 2.0;
    assert!(doubled.score(&x) > lin.score(&x));
}

#[test]
fn training_is_deterministic() {
    let data = default_set();
    for algo in Algo::SUPPORTED {
        let a = train(algo, &data, &TrainConfig::default(), ModelMeta::default()).unwrap();
        let b = train(algo, &data, &TrainConfig::default(), ModelMeta::default()).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_history, b.loss_history);
    }
}
