//! Cluster live-stream chatters by what they write.
//!
//! The pipeline turns a chat log into one document per chatter, embeds the
//! documents, builds a cosine affinity matrix and groups chatters with
//! affinity propagation. Clusters can then be pruned, merged by hand or
//! merged automatically, and rendered as a report.

pub mod cluster;
pub mod embed;
pub mod ingest;
pub mod metrics;
#[cfg(any(test, feature = "mock-server"))]
pub mod mock;
pub mod profile;
pub mod refine;
pub mod report;
pub mod similarity;
pub mod synth;

pub use cluster::{affinity_propagation, brute_force_exemplars, APParams, Cluster, Clustering};
pub use embed::{EmbedError, Embedder, EmbeddingVector};
pub use ingest::{parse_chat_log, ChatMessage, LogFormat};
pub use profile::{build_profiles, filter_by_activity, ChatterProfile};
pub use similarity::{build_affinity_matrix, cosine_similarity, AffinityMatrix};
