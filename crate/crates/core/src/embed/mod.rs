//! Document embeddings.
//!
//! Two backends share the [`Embedder`] trait: a deterministic character
//! n-gram hashing embedder that needs nothing but the text, and an HTTP
//! client for a remote embedding service (feature `remote`). Either can be
//! wrapped in an on-disk [`EmbeddingCache`].

mod cache;
mod local;
#[cfg(feature = "remote")]
mod remote;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use cache::{cache_key, CachedEmbedder, EmbeddingCache, CACHE_FILE};
pub use local::{local_hash_embed, LocalEmbedder, LocalEmbedderConfig};
#[cfg(feature = "remote")]
pub use remote::{remote_embed_batch, RemoteEmbedder, RemoteEmbedderConfig, API_KEY_ENV};

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("document {index} is empty")]
    EmptyDocument { index: usize },
    #[error("invalid embedder input: {0}")]
    Input(String),
    #[error("invalid embedder configuration: {0}")]
    Config(String),
    #[error("embedding protocol error: {0}")]
    Protocol(String),
    #[error("embedding service rejected the request (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("embedding backend failed: {0}")]
    Backend(String),
    #[error("embedding cache error: {0}")]
    Cache(#[from] std::io::Error),
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Dense real vector for one document.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Rejects empty and non-finite vectors.
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::Input("embedding has no dimensions".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::Input(format!("embedding value {i} is not finite")));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

impl fmt::Debug for EmbeddingVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.len() <= 8 {
            f.debug_tuple("EmbeddingVector").field(&self.0).finish()
        } else {
            write!(f, "EmbeddingVector(dim={}, [{:?}, ...])", self.0.len(), &self.0[..4])
        }
    }
}

/// Something that turns texts into vectors.
pub trait Embedder: Sync {
    /// Identifies the model; part of the cache key.
    fn model_id(&self) -> String;

    /// Embeds a batch. Implementations return exactly one vector per input,
    /// in input order.
    fn embed_batch(&self, documents: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn model_id(&self) -> String {
        (**self).model_id()
    }

    fn embed_batch(&self, documents: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed_batch(documents)
    }
}

/// Embeds every document, checking the backend's output contract: one vector
/// per document, same order, one shared dimension.
pub fn embed_documents<E, S>(backend: &E, documents: &[S]) -> Result<Vec<EmbeddingVector>, EmbedError>
where
    E: Embedder + ?Sized,
    S: AsRef<str>,
{
    if let Some(index) = documents.iter().position(|d| d.as_ref().is_empty()) {
        return Err(EmbedError::EmptyDocument { index });
    }
    if documents.is_empty() {
        return Ok(Vec::new());
    }
    let docs: Vec<&str> = documents.iter().map(AsRef::as_ref).collect();
    let vectors = backend.embed_batch(&docs)?;
    check_batch(&vectors, docs.len())?;
    Ok(vectors)
}

pub(crate) fn check_batch(vectors: &[EmbeddingVector], expected: usize) -> Result<(), EmbedError> {
    if vectors.len() != expected {
        return Err(EmbedError::Protocol(format!(
            "expected {expected} embeddings, got {}",
            vectors.len()
        )));
    }
    if let Some(first) = vectors.first() {
        if let Some(v) = vectors.iter().find(|v| v.dim() != first.dim()) {
            return Err(EmbedError::Protocol(format!(
                "mixed embedding dimensions {} and {}",
                first.dim(),
                v.dim()
            )));
        }
    }
    Ok(())
}

/// One line of an embeddings file written by the `embed` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub user: String,
    pub dim: usize,
    pub values: EmbeddingVector,
}
