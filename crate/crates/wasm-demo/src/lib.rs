//! Browser bindings. Each exported function takes plain values and returns
//! a JSON string; the native `*_json` twins hold the logic so they can be
//! tested without a JavaScript host.

use chatter_atlas::cluster::{affinity_propagation, APParams};
use chatter_atlas::embed::{embed_documents, LocalEmbedder, LocalEmbedderConfig};
use chatter_atlas::ingest::{dataset_summary, engagement_histogram, parse_chat_log, write_jsonl, BucketSpec, LogFormat};
use chatter_atlas::profile::{build_profiles, filter_by_activity};
use chatter_atlas::refine::{auto_merge, prune_singletons, AutoMergeParams};
use chatter_atlas::report::{cluster_report, render, ReportFormat};
use chatter_atlas::similarity::{build_affinity_matrix, matrix_median, median_preference, AffinityMatrix};
use chatter_atlas::synth::{planted_corpus, PlantedCorpusSpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct PointClustering {
    pub converged: bool,
    pub iterations: usize,
    pub preference: f64,
    /// Cluster index of every point.
    pub labels: Vec<usize>,
    pub exemplars: Vec<usize>,
}

/// Similarity of 2-D points: squared distance mapped linearly onto
/// `[-1, 1]`, 1 for coincident points and -1 for the farthest pair.
pub fn point_similarities(xy: &[f64]) -> Result<Vec<Vec<f64>>, String> {
    if !xy.len().is_multiple_of(2) {
        return Err("coordinates must come in x, y pairs".into());
    }
    if xy.iter().any(|v| !v.is_finite()) {
        return Err("coordinates must be finite".into());
    }
    let pts: Vec<(f64, f64)> = xy.chunks(2).map(|c| (c[0], c[1])).collect();
    let d2 = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
    let mut far = 0.0f64;
    for (i, &a) in pts.iter().enumerate() {
        for &b in &pts[i + 1..] {
            far = far.max(d2(a, b));
        }
    }
    let far = if far > 0.0 { far } else { 1.0 };
    Ok(pts
        .iter()
        .map(|&a| pts.iter().map(|&b| 1.0 - 2.0 * d2(a, b) / far).collect())
        .collect())
}

/// Affinity propagation on points given as `[x0, y0, x1, y1, ...]`. A
/// `preference` of `None` uses the median similarity.
pub fn cluster_points_json(xy: &[f64], preference: Option<f64>, damping: f64) -> Result<String, String> {
    let rows = point_similarities(xy)?;
    if rows.is_empty() {
        return Err("no points".into());
    }
    let s = AffinityMatrix::from_rows(rows).map_err(|e| e.to_string())?;
    let preference = preference.or_else(|| matrix_median(&s)).unwrap_or(0.0);
    let s = s.with_preference(preference);
    let params = APParams {
        damping,
        ..APParams::default()
    };
    let c = affinity_propagation(&s, &params).map_err(|e| e.to_string())?;
    let labels = c
        .labels()
        .into_iter()
        .map(|l| l.expect("unpruned clustering covers every point"))
        .collect();
    let out = PointClustering {
        converged: c.converged,
        iterations: c.iterations,
        preference,
        labels,
        exemplars: c.clusters.iter().map(|k| k.exemplar).collect(),
    };
    Ok(serde_json::to_string(&out).expect("serializable"))
}

#[derive(Debug, Serialize)]
pub struct ChatClusterSummary {
    pub name: String,
    pub size: usize,
    pub exemplar: String,
    pub users: Vec<String>,
    pub top_terms: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct ChatClustering {
    pub converged: bool,
    pub chatters: usize,
    pub retained: usize,
    pub clusters: Vec<ChatClusterSummary>,
    /// Markdown report.
    pub report: String,
}

/// The whole pipeline with the local embedder, on a chat log held in memory.
pub fn cluster_chat_json(log: &str, format: &str, min_messages: usize, auto: bool) -> Result<String, String> {
    let format: LogFormat = format.parse()?;
    let parsed = parse_chat_log(log.as_bytes(), format).map_err(|e| e.to_string())?;
    let summary = dataset_summary(&parsed.messages).map_err(|e| e.to_string())?;
    let profiles = filter_by_activity(build_profiles(&parsed.messages), min_messages.max(1));
    if profiles.len() < 2 {
        return Err(format!("{} chatters with at least {min_messages} messages; need 2", profiles.len()));
    }
    let embedder = LocalEmbedder::new(LocalEmbedderConfig::default()).map_err(|e| e.to_string())?;
    let docs: Vec<&str> = profiles.iter().map(|p| p.document.as_str()).collect();
    let vectors = embed_documents(&embedder, &docs).map_err(|e| e.to_string())?;
    let pref = median_preference(&vectors).map_err(|e| e.to_string())?;
    let s = build_affinity_matrix(&vectors, pref).map_err(|e| e.to_string())?;
    let raw = affinity_propagation(&s, &APParams::default()).map_err(|e| e.to_string())?;
    let mut c = if raw.converged { prune_singletons(&raw) } else { raw };
    if auto && c.converged {
        c = auto_merge(&c, &vectors, &AutoMergeParams::default())
            .map_err(|e| e.to_string())?
            .clustering;
    }
    let reports = cluster_report(&c, &profiles, &vectors, 6, 3).map_err(|e| e.to_string())?;
    let hist = engagement_histogram(&parsed.messages, &BucketSpec::default());
    let report = render(&reports, &summary, &hist, ReportFormat::Markdown);
    let clusters = c
        .clusters
        .iter()
        .zip(&reports)
        .map(|(k, r)| ChatClusterSummary {
            name: r.label(),
            size: r.size,
            exemplar: r.exemplar_user.clone(),
            users: k.members.iter().map(|&m| profiles[m].user_display.clone()).collect(),
            top_terms: r.top_terms.iter().map(|t| t.term.clone()).collect(),
        })
        .collect();
    let out = ChatClustering {
        converged: c.converged,
        chatters: summary.chatters,
        retained: profiles.len(),
        clusters,
        report,
    };
    Ok(serde_json::to_string(&out).expect("serializable"))
}

/// A seeded JSONL chat log with three planted chatter archetypes.
pub fn sample_log(seed: u64) -> String {
    let corpus = planted_corpus(&PlantedCorpusSpec {
        seed,
        ..PlantedCorpusSpec::default()
    });
    let mut buf = Vec::new();
    write_jsonl(&corpus.messages, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

#[wasm_bindgen(js_name = clusterPoints)]
pub fn cluster_points(xy: &[f64], preference: Option<f64>, damping: f64) -> Result<String, JsError> {
    cluster_points_json(xy, preference, damping).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = clusterChat)]
pub fn cluster_chat(log: &str, format: &str, min_messages: usize, auto_merge: bool) -> Result<String, JsError> {
    cluster_chat_json(log, format, min_messages, auto_merge).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sampleLog)]
pub fn sample_log_js(seed: u32) -> String {
    sample_log(u64::from(seed))
}
