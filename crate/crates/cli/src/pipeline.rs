//! Pipeline stages shared by the subcommands, and the full `run`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chatter_atlas::cluster::{affinity_propagation, APParams, Clustering};
use chatter_atlas::embed::{
    embed_documents, CachedEmbedder, Embedder, EmbeddingCache, EmbeddingRecord, EmbeddingVector, LocalEmbedder,
    RemoteEmbedder,
};
use chatter_atlas::ingest::{dataset_summary, engagement_histogram, parse_chat_log, ChatMessage, ParsedLog};
use chatter_atlas::profile::{build_profiles, ChatterProfile};
use chatter_atlas::refine::{apply_merge_spec, auto_merge, cluster_centroid, prune_singletons, AutoMergeParams, MergeSpec};
use chatter_atlas::report::{cluster_report, render, ReportFormat};
use chatter_atlas::similarity::{build_affinity_matrix, cosine_similarity, median_preference};
use serde::{Deserialize, Serialize};

use crate::config::{EmbedderKind, PipelineConfig};
use crate::error::{CliError, EXIT_NOT_CONVERGED};

pub const CLUSTERING_FILE: &str = "clustering.json";
pub const METADATA_FILE: &str = "pipeline.json";
pub const PROFILES_FILE: &str = "profiles.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";
pub const CENTROIDS_FILE: &str = "centroid_similarity.csv";

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Other(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut out = create(path)?;
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| io_err(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output types serialize");
    s.push('\n');
    s
}

pub fn load_log(path: &Path, format: chatter_atlas::ingest::LogFormat) -> Result<ParsedLog, CliError> {
    let file = File::open(path).map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    Ok(parse_chat_log(file, format)?)
}

#[derive(Debug, Clone)]
pub struct ProfileSelection {
    pub retained: Vec<ChatterProfile>,
    /// Display names of chatters under the activity threshold.
    pub below_threshold: Vec<String>,
    /// Display names removed by the exclusion list.
    pub excluded: Vec<String>,
}

/// Builds profiles and keeps chatters with at least `min_messages` messages
/// who are not on the exclusion list.
pub fn select_profiles(messages: &[ChatMessage], min_messages: usize, exclude: &[String]) -> Result<ProfileSelection, CliError> {
    let exclude: Vec<String> = exclude.iter().map(|u| u.to_lowercase()).collect();
    let mut sel = ProfileSelection {
        retained: Vec::new(),
        below_threshold: Vec::new(),
        excluded: Vec::new(),
    };
    for p in build_profiles(messages) {
        if exclude.contains(&p.user_key) {
            sel.excluded.push(p.user_display);
        } else if p.message_count < min_messages {
            sel.below_threshold.push(p.user_display);
        } else {
            sel.retained.push(p);
        }
    }
    if sel.retained.is_empty() {
        return Err(CliError::Input(format!(
            "no chatters above threshold ({min_messages} messages)"
        )));
    }
    Ok(sel)
}

pub fn write_profiles(path: &Path, profiles: &[ChatterProfile]) -> Result<(), CliError> {
    let mut out = create(path)?;
    chatter_atlas::profile::write_profiles(profiles, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| io_err(path, e))
}

pub fn read_profiles(path: &Path) -> Result<Vec<ChatterProfile>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    chatter_atlas::profile::read_profiles(BufReader::new(file))
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone)]
pub struct Embedded {
    pub vectors: Vec<EmbeddingVector>,
    pub model_id: String,
    /// Documents cut to the remote length limit.
    pub truncated: usize,
}

fn embed_with<E: Embedder>(backend: &E, docs: &[&str], cache_dir: Option<&Path>) -> Result<Vec<EmbeddingVector>, CliError> {
    match cache_dir {
        Some(dir) => {
            let cache = EmbeddingCache::open(dir)?;
            let cached = CachedEmbedder { cache: &cache, inner: backend };
            Ok(embed_documents(&cached, docs)?)
        }
        None => Ok(embed_documents(backend, docs)?),
    }
}

/// Embeds profile documents with the configured backend, through the cache
/// in `cache_dir` when one is given.
pub fn embed_profiles(cfg: &PipelineConfig, profiles: &[ChatterProfile], cache_dir: Option<&Path>) -> Result<Embedded, CliError> {
    let docs: Vec<&str> = profiles.iter().map(|p| p.document.as_str()).collect();
    match cfg.embedder {
        EmbedderKind::Local => {
            let backend = LocalEmbedder::new(cfg.local)?;
            Ok(Embedded {
                vectors: embed_with(&backend, &docs, cache_dir)?,
                model_id: backend.model_id(),
                truncated: 0,
            })
        }
        EmbedderKind::Remote => {
            let backend = RemoteEmbedder::new(cfg.remote.clone().with_env_key())?;
            let vectors = embed_with(&backend, &docs, cache_dir)?;
            if backend.truncated_count() > 0 {
                log::warn!(
                    "{} documents truncated to {} characters",
                    backend.truncated_count(),
                    cfg.remote.max_chars
                );
            }
            Ok(Embedded {
                vectors,
                model_id: backend.model_id(),
                truncated: backend.truncated_count(),
            })
        }
    }
}

pub fn write_embeddings(path: &Path, users: &[String], vectors: &[EmbeddingVector]) -> Result<(), CliError> {
    let mut out = create(path)?;
    for (user, v) in users.iter().zip(vectors) {
        let rec = EmbeddingRecord {
            user: user.clone(),
            dim: v.dim(),
            values: v.clone(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(|e| io_err(path, e))?;
        out.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<(Vec<String>, Vec<EmbeddingVector>), CliError> {
    let file = File::open(path).map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    let (mut users, mut vectors) = (Vec::new(), Vec::new());
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line)
            .map_err(|e| CliError::Input(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if rec.dim != rec.values.dim() {
            return Err(CliError::Input(format!(
                "{} line {}: dim {} but {} values",
                path.display(),
                i + 1,
                rec.dim,
                rec.values.dim()
            )));
        }
        users.push(rec.user);
        vectors.push(rec.values);
    }
    Ok((users, vectors))
}

/// Clustering JSON as written to disk: the clustering plus the user behind
/// each point index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringFile {
    pub users: Vec<String>,
    pub clustering: Clustering,
}

pub fn read_clustering(path: &Path) -> Result<ClusteringFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let file: ClusteringFile =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    file.clustering
        .validate()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if file.users.len() != file.clustering.points {
        return Err(CliError::Input(format!(
            "{}: {} users for {} points",
            path.display(),
            file.users.len(),
            file.clustering.points
        )));
    }
    Ok(file)
}

pub fn load_merge_spec(path: &Path) -> Result<MergeSpec, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::MergeSpec(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::MergeSpec(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub clustering: Clustering,
    pub preference: f64,
}

/// Affinity propagation on cosine similarities, then singleton pruning when
/// asked. A run that does not converge comes back as all singletons and is
/// never pruned.
pub fn cluster_vectors(vectors: &[EmbeddingVector], preference: Option<f64>, ap: &APParams, prune: bool) -> Result<ClusterOutcome, CliError> {
    let preference = match preference {
        Some(p) => p,
        None if vectors.len() < 2 => 0.0,
        None => median_preference(vectors)?,
    };
    let s = build_affinity_matrix(vectors, preference)?;
    let raw = affinity_propagation(&s, ap)?;
    let clustering = if raw.converged && prune { prune_singletons(&raw) } else { raw };
    Ok(ClusterOutcome { clustering, preference })
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub clustering: Clustering,
    pub auto_merge_rounds: usize,
    pub warnings: Vec<String>,
}

/// Applies a merge spec, then automatic merging.
pub fn refine(c: &Clustering, vectors: &[EmbeddingVector], spec: Option<&MergeSpec>, auto: Option<&AutoMergeParams>) -> Result<RefineOutcome, CliError> {
    let mut clustering = match spec {
        Some(spec) => apply_merge_spec(c, spec)?,
        None => c.clone(),
    };
    let mut out = RefineOutcome {
        clustering: clustering.clone(),
        auto_merge_rounds: 0,
        warnings: Vec::new(),
    };
    if let Some(params) = auto {
        let merged = auto_merge(&clustering, vectors, params)?;
        clustering = merged.clustering;
        out.auto_merge_rounds = merged.rounds;
        out.warnings.extend(merged.warning);
    }
    out.clustering = clustering;
    Ok(out)
}

/// Renders the report for a clustering of `profiles`.
pub fn report_text(
    cfg: &PipelineConfig,
    messages: &[ChatMessage],
    c: &Clustering,
    profiles: &[ChatterProfile],
    vectors: &[EmbeddingVector],
) -> Result<String, CliError> {
    let reports = cluster_report(c, profiles, vectors, cfg.k_terms, cfg.k_samples)?;
    let summary = dataset_summary(messages)?;
    let hist = engagement_histogram(messages, &cfg.bucket_spec()?);
    Ok(render(&reports, &summary, &hist, cfg.output_format))
}

/// Cosine similarity between cluster centroids as CSV, with cluster ids as
/// row and column headers.
pub fn centroid_similarity_csv(c: &Clustering, vectors: &[EmbeddingVector]) -> Result<String, CliError> {
    let centroids = c
        .clusters
        .iter()
        .map(|k| cluster_centroid(&k.members, vectors))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = String::from("cluster");
    for k in &c.clusters {
        out.push_str(&format!(",{}", k.id));
    }
    out.push('\n');
    for (k, a) in c.clusters.iter().zip(&centroids) {
        out.push_str(&k.id.to_string());
        for b in &centroids {
            out.push_str(&format!(",{:.6}", cosine_similarity(a, b)?));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn report_file_name(format: ReportFormat) -> String {
    format!("report.{}", format.extension())
}

/// Facts about a run, written next to its other outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub input: String,
    pub messages: usize,
    pub malformed: usize,
    pub chatters: usize,
    pub min_messages: usize,
    pub excluded_users: Vec<String>,
    pub below_threshold: Vec<String>,
    pub retained: Vec<String>,
    pub embedder: String,
    pub truncated_documents: usize,
    pub preference: f64,
    pub converged: bool,
    pub iterations: usize,
    pub clusters: usize,
    pub pruned_users: Vec<String>,
    pub auto_merge_rounds: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub metadata: RunMetadata,
    pub clustering: ClusteringFile,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.metadata.converged {
            0
        } else {
            EXIT_NOT_CONVERGED
        }
    }

    pub fn line(&self) -> String {
        let m = &self.metadata;
        if m.converged {
            format!("{} clusters from {} chatters (converged after {} iterations)", m.clusters, m.retained.len(), m.iterations)
        } else {
            format!(
                "{} clusters from {} chatters (did not converge within {} iterations)",
                m.clusters,
                m.retained.len(),
                m.iterations
            )
        }
    }
}

/// Runs every stage and writes profiles, embeddings, clustering, report and
/// run metadata into `cfg.output_path`. A clustering that does not converge
/// still produces every artifact; refinement is skipped.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let spec = cfg.merge_spec_path.as_deref().map(load_merge_spec).transpose()?;
    let input = cfg.input_path()?;
    let log = load_log(input, cfg.resolved_input_format())?;
    let summary = dataset_summary(&log.messages)?;
    let sel = select_profiles(&log.messages, cfg.min_messages, &cfg.exclude_users)?;
    log::info!(
        "{} of {} chatters retained ({} below threshold, {} excluded)",
        sel.retained.len(),
        summary.chatters,
        sel.below_threshold.len(),
        sel.excluded.len()
    );
    let users: Vec<String> = sel.retained.iter().map(|p| p.user_display.clone()).collect();

    let out = &cfg.output_path;
    write_profiles(&out.join(PROFILES_FILE), &sel.retained)?;
    let embedded = embed_profiles(cfg, &sel.retained, Some(&cfg.cache_dir()))?;
    write_embeddings(&out.join(EMBEDDINGS_FILE), &users, &embedded.vectors)?;

    let clustered = cluster_vectors(&embedded.vectors, cfg.preference, &cfg.ap, cfg.prune_singletons)?;
    let converged = clustered.clustering.converged;
    let refined = if converged {
        let auto = cfg.auto_merge.then_some(AutoMergeParams {
            max_depth: cfg.auto_merge_depth,
            ap: cfg.ap,
        });
        refine(&clustered.clustering, &embedded.vectors, spec.as_ref(), auto.as_ref())?
    } else {
        log::warn!("affinity propagation did not converge; writing singleton clusters");
        RefineOutcome {
            clustering: clustered.clustering.clone(),
            auto_merge_rounds: 0,
            warnings: vec![format!("did not converge within {} iterations", cfg.ap.max_iter)],
        }
    };
    let clustering = refined.clustering;

    let file = ClusteringFile {
        users: users.clone(),
        clustering: clustering.clone(),
    };
    write_text(&out.join(CLUSTERING_FILE), &to_json(&file))?;
    let report = report_text(cfg, &log.messages, &clustering, &sel.retained, &embedded.vectors)?;
    write_text(&out.join(report_file_name(cfg.output_format)), &report)?;
    write_text(&out.join(CENTROIDS_FILE), &centroid_similarity_csv(&clustering, &embedded.vectors)?)?;

    let metadata = RunMetadata {
        input: input.display().to_string(),
        messages: summary.messages,
        malformed: log.malformed,
        chatters: summary.chatters,
        min_messages: cfg.min_messages,
        excluded_users: sel.excluded,
        below_threshold: sel.below_threshold,
        retained: users.clone(),
        embedder: embedded.model_id,
        truncated_documents: embedded.truncated,
        preference: clustered.preference,
        converged,
        iterations: clustering.iterations,
        clusters: clustering.clusters.len(),
        pruned_users: clustering.removed.iter().map(|&i| users[i].clone()).collect(),
        auto_merge_rounds: refined.auto_merge_rounds,
        warnings: refined.warnings,
    };
    write_text(&out.join(METADATA_FILE), &to_json(&metadata))?;
    Ok(RunSummary { metadata, clustering: file })
}
