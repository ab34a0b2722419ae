use ltrr_web::{plackett_luce_json, regularize_json, RoutingDemo};
use serde_json::Value;

#[test]
fn regularize_with_no_steps_keeps_scores() {
    let out: Value = serde_json::from_str(&regularize_json(&[0.9, 0.5, 0.1], &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0], 2, 2, 0).unwrap()).unwrap();
    assert_eq!(out["scores"], serde_json::json!([0.9, 0.5, 0.1]));
    assert_eq!(out["order"], serde_json::json!([0, 1, 2]));
}

#[test]
fn regularize_rejects_ragged_embeddings() {
    assert!(regularize_json(&[0.9, 0.5], &[1.0, 0.0, 0.0], 2, 2, 1).is_err());
}

#[test]
fn plackett_luce_frequencies_track_probabilities() {
    let out: Value = serde_json::from_str(&plackett_luce_json(&[3.0, 2.0, 1.0], 1.0, 4000, 0).unwrap()).unwrap();
    let a: Vec<f64> = serde_json::from_value(out["analytic"].clone()).unwrap();
    let e: Vec<f64> = serde_json::from_value(out["empirical"].clone()).unwrap();
    assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for (x, y) in a.iter().zip(&e) {
        assert!((x - y).abs() < 0.03, "{a:?} vs {e:?}");
    }
}

#[test]
fn routing_demo_ranks_every_option() {
    let demo = RoutingDemo::build().unwrap();
    let examples: Vec<(String, String)> = serde_json::from_str(&demo.examples_json().unwrap()).unwrap();
    assert!(!examples.is_empty());
    let out: Value = serde_json::from_str(&demo.route_json(&examples[0].0).unwrap()).unwrap();
    assert_eq!(out["ranking"].as_array().unwrap().len(), 7);
    assert_eq!(out["chosen"], out["ranking"][0]);
    assert_eq!(out["heuristics"].as_object().unwrap().len(), 5);
    let doc = out["options"][0]["docs"][0].as_str().unwrap();
    assert!(demo.document(doc).is_some());
    assert!(demo.route_json("  ").is_err());
}
