use serde::{Deserialize, Serialize};

use super::{fnv1a64, EmbedError, Embedder, EmbeddingVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalEmbedderConfig {
    pub dim: usize,
    pub ngram: usize,
}

impl Default for LocalEmbedderConfig {
    fn default() -> Self {
        LocalEmbedderConfig { dim: 256, ngram: 3 }
    }
}

impl LocalEmbedderConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim < 2 {
            return Err(EmbedError::Config(format!("dim must be >= 2, got {}", self.dim)));
        }
        if self.ngram < 1 {
            return Err(EmbedError::Config("ngram must be >= 1".into()));
        }
        Ok(())
    }
}

/// Signed feature hashing of character n-grams, L2-normalized.
///
/// Every window of `ngram` consecutive characters is hashed (FNV-1a 64 over
/// its UTF-8 bytes). The bucket is `hash % dim`; the sign is `+1` when bit 63
/// is clear. A document shorter than `ngram` characters is right-padded with
/// spaces to one full window.
pub fn local_hash_embed(document: &str, config: &LocalEmbedderConfig) -> Result<EmbeddingVector, EmbedError> {
    config.validate()?;
    if document.is_empty() {
        return Err(EmbedError::EmptyDocument { index: 0 });
    }
    let mut chars: Vec<char> = document.chars().collect();
    if chars.len() < config.ngram {
        chars.resize(config.ngram, ' ');
    }

    let mut acc = vec![0.0f64; config.dim];
    let mut gram = String::new();
    for window in chars.windows(config.ngram) {
        gram.clear();
        gram.extend(window);
        let h = fnv1a64(gram.as_bytes());
        let bucket = (h % config.dim as u64) as usize;
        if h >> 63 == 0 {
            acc[bucket] += 1.0;
        } else {
            acc[bucket] -= 1.0;
        }
    }

    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(EmbedError::Input(
            "n-gram features cancel out to a zero vector".into(),
        ));
    }
    acc.iter_mut().for_each(|v| *v /= norm);
    EmbeddingVector::new(acc)
}

/// [`Embedder`] over [`local_hash_embed`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LocalEmbedder {
    pub config: LocalEmbedderConfig,
}

impl LocalEmbedder {
    pub fn new(config: LocalEmbedderConfig) -> Result<Self, EmbedError> {
        config.validate()?;
        Ok(LocalEmbedder { config })
    }
}

impl Embedder for LocalEmbedder {
    fn model_id(&self) -> String {
        format!("local-fnv1a-d{}-n{}", self.config.dim, self.config.ngram)
    }

    fn embed_batch(&self, documents: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        documents
            .iter()
            .enumerate()
            .map(|(index, d)| {
                local_hash_embed(d, &self.config).map_err(|e| match e {
                    EmbedError::EmptyDocument { .. } => EmbedError::EmptyDocument { index },
                    other => other,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::cosine_similarity;
    use proptest::prelude::*;

    fn cfg() -> LocalEmbedderConfig {
        LocalEmbedderConfig::default()
    }

    #[test]
    fn deterministic_and_normalized() {
        let a = local_hash_embed("abc", &cfg()).unwrap();
        let b = local_hash_embed("abc", &cfg()).unwrap();
        assert_eq!(a.values(), b.values());
        assert!((a.norm() - 1.0).abs() < 1e-9);
        assert_eq!(a.dim(), 256);
    }

    #[test]
    fn distinct_documents_differ() {
        let a = local_hash_embed("aaaa", &cfg()).unwrap();
        let b = local_hash_embed("bbbb", &cfg()).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn self_cosine_is_one() {
        let d = "kirby kirby party\nPartyKirby";
        let a = local_hash_embed(d, &cfg()).unwrap();
        let b = local_hash_embed(d, &cfg()).unwrap();
        assert!((cosine_similarity(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_gram_placement() {
        // "abc" is one window: exactly one signed unit entry
        let v = local_hash_embed("abc", &cfg()).unwrap();
        let h = fnv1a64(b"abc");
        let bucket = (h % 256) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        assert_eq!(v.values()[bucket], sign);
        assert_eq!(v.values().iter().filter(|x| **x != 0.0).count(), 1);
    }

    #[test]
    fn short_document_is_padded() {
        let v = local_hash_embed("a", &cfg()).unwrap();
        let w = local_hash_embed("a  ", &cfg()).unwrap();
        assert_eq!(v, w);
    }

    #[test]
    fn invalid_config_and_input() {
        let bad = LocalEmbedderConfig { dim: 1, ngram: 3 };
        assert!(matches!(local_hash_embed("abc", &bad), Err(EmbedError::Config(_))));
        let bad = LocalEmbedderConfig { dim: 8, ngram: 0 };
        assert!(LocalEmbedder::new(bad).is_err());
        assert!(matches!(local_hash_embed("", &cfg()), Err(EmbedError::EmptyDocument { .. })));
    }

    #[test]
    fn batch_reports_offending_index() {
        let e = LocalEmbedder::default();
        let err = e.embed_batch(&["abc", ""]).unwrap_err();
        assert!(matches!(err, EmbedError::EmptyDocument { index: 1 }));
    }

    proptest! {
        #[test]
        fn unit_norm(doc in "\\PC{1,200}", dim in 2usize..512, ngram in 1usize..6) {
            let config = LocalEmbedderConfig { dim, ngram };
            match local_hash_embed(&doc, &config) {
                Ok(v) => {
                    prop_assert_eq!(v.dim(), dim);
                    prop_assert!((v.norm() - 1.0).abs() <= 1e-9);
                    prop_assert_eq!(local_hash_embed(&doc, &config).unwrap(), v);
                }
                // only possible through exact cancellation of colliding grams
                Err(e) => prop_assert!(matches!(e, EmbedError::Input(_))),
            }
        }
    }
}
