//! Cluster evidence and rendered reports (markdown or JSON).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::Clustering;
use crate::embed::EmbeddingVector;
use crate::ingest::{DatasetSummary, EngagementHistogram};
use crate::profile::ChatterProfile;
use crate::similarity::cosine_slices;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReportError {
    #[error("misaligned report inputs: {0}")]
    Misaligned(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermScore {
    pub term: String,
    pub score: f64,
}

/// Machine evidence describing one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub cluster_id: usize,
    pub name: Option<String>,
    pub size: usize,
    pub exemplar_user: String,
    pub sample_messages: Vec<String>,
    pub top_terms: Vec<TermScore>,
    pub mean_intra_similarity: f64,
}

impl ClusterReport {
    pub fn label(&self) -> String {
        match &self.name {
            Some(n) => format!("{n} (#{})", self.cluster_id),
            None => format!("#{}", self.cluster_id),
        }
    }
}

fn term_counts<'a>(docs: impl IntoIterator<Item = &'a ChatterProfile>) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for p in docs {
        for tok in p.document.split_whitespace() {
            *counts.entry(tok.to_lowercase()).or_insert(0) += 1;
        }
    }
    counts
}

/// Highest-scoring terms of `cluster`, where `corpus` lists the members of
/// every cluster (including this one).
///
/// Terms are lowercased whitespace tokens. The score is the raw count in the
/// cluster times `ln((1 + T) / (1 + df)) + 1`, with `T` clusters in the
/// corpus and `df` of them containing the term. Ties sort by term.
pub fn top_terms(cluster: &[&ChatterProfile], corpus: &[Vec<&ChatterProfile>], k: usize) -> Vec<TermScore> {
    if k == 0 || cluster.is_empty() {
        return Vec::new();
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for members in corpus {
        let vocab: BTreeSet<String> = term_counts(members.iter().copied()).into_keys().collect();
        for t in vocab {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let total = corpus.len() as f64;
    let mut scored: Vec<TermScore> = term_counts(cluster.iter().copied())
        .into_iter()
        .map(|(term, tf)| {
            let d = df.get(&term).copied().unwrap_or(0) as f64;
            let idf = ((1.0 + total) / (1.0 + d)).ln() + 1.0;
            TermScore {
                score: tf as f64 * idf,
                term,
            }
        })
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.term.cmp(&b.term)));
    scored.truncate(k);
    scored
}

fn mean_pairwise_cosine(members: &[usize], vectors: &[EmbeddingVector]) -> f64 {
    if members.len() < 2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for (x, &i) in members.iter().enumerate() {
        for &j in &members[x + 1..] {
            sum += cosine_slices(vectors[i].values(), vectors[j].values()).unwrap_or(0.0);
            pairs += 1;
        }
    }
    sum / pairs as f64
}

/// One report per cluster: size, exemplar, the first `k_samples` messages
/// of the exemplar, `k_terms` top terms and the mean pairwise cosine.
pub fn cluster_report(
    c: &Clustering,
    profiles: &[ChatterProfile],
    vectors: &[EmbeddingVector],
    k_terms: usize,
    k_samples: usize,
) -> Result<Vec<ClusterReport>, ReportError> {
    if profiles.len() != c.points || vectors.len() != c.points {
        return Err(ReportError::Misaligned(format!(
            "{} points, {} profiles, {} vectors",
            c.points,
            profiles.len(),
            vectors.len()
        )));
    }
    let corpus: Vec<Vec<&ChatterProfile>> = c
        .clusters
        .iter()
        .map(|cl| cl.members.iter().map(|&m| &profiles[m]).collect())
        .collect();
    Ok(c.clusters
        .iter()
        .zip(&corpus)
        .map(|(cl, members)| {
            let exemplar = &profiles[cl.exemplar];
            ClusterReport {
                cluster_id: cl.id,
                name: cl.name.clone(),
                size: cl.members.len(),
                exemplar_user: exemplar.user_display.clone(),
                sample_messages: exemplar.messages().take(k_samples).map(str::to_string).collect(),
                top_terms: top_terms(members, &corpus, k_terms),
                mean_intra_similarity: mean_pairwise_cosine(&cl.members, vectors),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Markdown,
    Json,
}

impl ReportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Markdown => "md",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format `{other}` (expected markdown or json)")),
        }
    }
}

/// Everything a rendered report contains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub summary: DatasetSummary,
    pub histogram: EngagementHistogram,
    pub clusters: Vec<ClusterReport>,
}

fn cell(text: &str) -> String {
    text.replace('|', "\\|")
}

pub fn render(reports: &[ClusterReport], summary: &DatasetSummary, hist: &EngagementHistogram, format: ReportFormat) -> String {
    let doc = ReportDocument {
        summary: *summary,
        histogram: hist.clone(),
        clusters: reports.to_vec(),
    };
    match format {
        ReportFormat::Json => render_json(&doc),
        ReportFormat::Markdown => render_markdown(&doc),
    }
}

pub fn render_json(doc: &ReportDocument) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("report types serialize");
    s.push('\n');
    s
}

pub fn render_markdown(doc: &ReportDocument) -> String {
    let mut md = String::new();
    // writing to a String cannot fail
    let _ = writeln!(md, "# Chatter clusters\n");

    let s = &doc.summary;
    let _ = writeln!(md, "## Dataset\n");
    let _ = writeln!(md, "| Messages | Chatters | Length |");
    let _ = writeln!(md, "| ---: | ---: | ---: |");
    let _ = writeln!(md, "| {} | {} | {} |\n", s.messages, s.chatters, s.length_label());

    let _ = writeln!(md, "## Engagement\n");
    let _ = writeln!(md, "| Messages sent | Chatters |");
    let _ = writeln!(md, "| --- | ---: |");
    for b in &doc.histogram.buckets {
        let _ = writeln!(md, "| {} | {} |", b.label, b.chatters);
    }
    md.push('\n');

    let _ = writeln!(md, "## Clusters\n");
    if doc.clusters.is_empty() {
        let _ = writeln!(md, "No clusters.");
        return md;
    }
    let _ = writeln!(md, "| Cluster | Size | Exemplar | Top terms |");
    let _ = writeln!(md, "| --- | ---: | --- | --- |");
    for r in &doc.clusters {
        let terms: Vec<&str> = r.top_terms.iter().map(|t| t.term.as_str()).collect();
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} |",
            cell(&r.label()),
            r.size,
            cell(&r.exemplar_user),
            cell(&terms.join(", "))
        );
    }
    for r in &doc.clusters {
        let _ = writeln!(md, "\n### {}\n", r.label());
        let _ = writeln!(
            md,
            "Exemplar `{}`, mean intra-cluster similarity {:.4}.",
            r.exemplar_user.replace('`', "'"),
            r.mean_intra_similarity
        );
        if !r.sample_messages.is_empty() {
            md.push('\n');
            for m in &r.sample_messages {
                if m.is_empty() {
                    md.push_str(">\n");
                } else {
                    let _ = writeln!(md, "> {m}");
                }
            }
        }
    }
    md
}
