use chatter_atlas_wasm::{cluster_chat_json, cluster_points_json, point_similarities, sample_log};
use serde_json::Value;

#[test]
fn two_blobs_of_points() {
    let xy = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 10.0, 10.0, 11.0, 10.0, 10.0, 11.0];
    let out: Value = serde_json::from_str(&cluster_points_json(&xy, None, 0.5).unwrap()).unwrap();
    assert_eq!(out["converged"], true);
    let labels: Vec<u64> = out["labels"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(labels, [0, 0, 0, 1, 1, 1]);
}

#[test]
fn similarities_span_the_unit_range() {
    let s = point_similarities(&[0.0, 0.0, 3.0, 4.0, 0.0, 4.0]).unwrap();
    assert_eq!(s[0][0], 1.0);
    assert_eq!(s[0][1], -1.0);
    assert_eq!(s[1][0], s[0][1]);
}

#[test]
fn bad_points_are_reported() {
    assert!(cluster_points_json(&[1.0], None, 0.5).is_err());
    assert!(cluster_points_json(&[], None, 0.5).is_err());
    assert!(cluster_points_json(&[0.0, 0.0, 1.0, 1.0], None, 1.5).is_err());
}

#[test]
fn sample_log_clusters_into_three() {
    let log = sample_log(7);
    let out: Value = serde_json::from_str(&cluster_chat_json(&log, "jsonl", 20, true).unwrap()).unwrap();
    assert_eq!(out["clusters"].as_array().unwrap().len(), 3);
    assert_eq!(out["retained"], 45);
    assert!(out["report"].as_str().unwrap().starts_with("# Chatter clusters"));
}

#[test]
fn tiny_log_is_rejected() {
    let log = r#"{"ts":"2024-01-01T00:00:00Z","user":"a","text":"hi"}"#;
    let err = cluster_chat_json(log, "jsonl", 1, false).unwrap_err();
    assert!(err.contains("need 2"));
}
