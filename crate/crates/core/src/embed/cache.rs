use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{check_batch, embed_documents, fnv1a64, EmbedError, Embedder, EmbeddingVector};

/// File name of the cache inside its directory.
pub const CACHE_FILE: &str = "embeddings.jsonl";

/// FNV-1a 64 of `model ‖ 0x00 ‖ document`.
pub fn cache_key(model: &str, document: &str) -> u64 {
    let mut bytes = Vec::with_capacity(model.len() + 1 + document.len());
    bytes.extend_from_slice(model.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(document.as_bytes());
    fnv1a64(&bytes)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheRecord {
    key: String,
    model: String,
    dim: usize,
    values: Vec<f64>,
}

impl CacheRecord {
    fn decode(line: &str) -> Option<(u64, String, EmbeddingVector)> {
        let rec: CacheRecord = serde_json::from_str(line).ok()?;
        if rec.key.len() != 16 || rec.dim != rec.values.len() {
            return None;
        }
        let key = u64::from_str_radix(&rec.key, 16).ok()?;
        let vector = EmbeddingVector::new(rec.values).ok()?;
        Some((key, rec.model, vector))
    }
}

#[derive(Debug, Default)]
struct Inner {
    entries: HashMap<u64, (String, EmbeddingVector)>,
    // set when the file holds lines we could not decode
    dirty: bool,
}

/// JSONL-backed embedding cache.
///
/// Undecodable lines are dropped with a warning at open time; the file is
/// rewritten from the valid entries on the next insert.
#[derive(Debug)]
pub struct EmbeddingCache {
    path: PathBuf,
    inner: Mutex<Inner>,
}

impl EmbeddingCache {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let path = dir.join(CACHE_FILE);
        let mut inner = Inner::default();
        if path.exists() {
            let mut corrupt = 0usize;
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match CacheRecord::decode(&line) {
                    Some((key, model, v)) => {
                        inner.entries.insert(key, (model, v));
                    }
                    None => corrupt += 1,
                }
            }
            if corrupt > 0 {
                log::warn!(
                    "{}: ignoring {corrupt} corrupted cache records; affected documents will be re-embedded",
                    path.display()
                );
                inner.dirty = true;
            }
        }
        Ok(EmbeddingCache {
            path,
            inner: Mutex::new(inner),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn get(&self, model: &str, document: &str) -> Option<EmbeddingVector> {
        let key = cache_key(model, document);
        let inner = self.lock();
        inner
            .entries
            .get(&key)
            .filter(|(m, _)| m == model)
            .map(|(_, v)| v.clone())
    }

    fn store(&self, model: &str, items: Vec<(u64, EmbeddingVector)>) -> Result<(), EmbedError> {
        let mut inner = self.lock();
        for (key, v) in &items {
            inner.entries.insert(*key, (model.to_string(), v.clone()));
        }
        if inner.dirty {
            let tmp = self.path.with_extension("jsonl.tmp");
            {
                let mut out = BufWriter::new(File::create(&tmp)?);
                let mut keys: Vec<&u64> = inner.entries.keys().collect();
                keys.sort_unstable();
                for key in keys {
                    let (m, v) = &inner.entries[key];
                    write_record(&mut out, *key, m, v)?;
                }
                out.flush()?;
            }
            fs::rename(&tmp, &self.path)?;
            inner.dirty = false;
        } else {
            let mut out = BufWriter::new(OpenOptions::new().create(true).append(true).open(&self.path)?);
            for (key, v) in &items {
                write_record(&mut out, *key, model, v)?;
            }
            out.flush()?;
        }
        Ok(())
    }

    /// Returns the cached vector or embeds, stores and returns it.
    pub fn fetch_or_embed<E: Embedder + ?Sized>(&self, backend: &E, document: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut out = self.fetch_or_embed_many(backend, &[document])?;
        Ok(out.remove(0))
    }

    /// Batch form of [`fetch_or_embed`](Self::fetch_or_embed): only misses
    /// reach the backend, each distinct document once.
    pub fn fetch_or_embed_many<E: Embedder + ?Sized>(
        &self,
        backend: &E,
        documents: &[&str],
    ) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let model = backend.model_id();
        let keys: Vec<u64> = documents.iter().map(|d| cache_key(&model, d)).collect();
        let mut found: Vec<Option<EmbeddingVector>> = {
            let inner = self.lock();
            keys.iter()
                .map(|k| {
                    inner
                        .entries
                        .get(k)
                        .filter(|(m, _)| *m == model)
                        .map(|(_, v)| v.clone())
                })
                .collect()
        };

        let mut miss_keys: Vec<u64> = Vec::new();
        let mut miss_docs: Vec<&str> = Vec::new();
        for (i, slot) in found.iter().enumerate() {
            if slot.is_none() && !miss_keys.contains(&keys[i]) {
                miss_keys.push(keys[i]);
                miss_docs.push(documents[i]);
            }
        }
        if !miss_docs.is_empty() {
            log::debug!("embedding cache: {} hits, {} misses", documents.len() - miss_docs.len(), miss_docs.len());
            let fresh = embed_documents(backend, &miss_docs)?;
            let by_key: HashMap<u64, &EmbeddingVector> =
                miss_keys.iter().copied().zip(fresh.iter()).collect();
            for (i, slot) in found.iter_mut().enumerate() {
                if slot.is_none() {
                    *slot = Some(by_key[&keys[i]].clone());
                }
            }
            self.store(&model, miss_keys.into_iter().zip(fresh).collect())?;
        }
        Ok(found.into_iter().map(|v| v.expect("filled above")).collect())
    }
}

fn write_record<W: Write>(out: &mut W, key: u64, model: &str, v: &EmbeddingVector) -> std::io::Result<()> {
    let rec = CacheRecord {
        key: format!("{key:016x}"),
        model: model.to_string(),
        dim: v.dim(),
        values: v.values().to_vec(),
    };
    serde_json::to_writer(&mut *out, &rec)?;
    out.write_all(b"\n")
}

/// An [`Embedder`] that consults a cache before its inner backend.
pub struct CachedEmbedder<'a, E: ?Sized> {
    pub cache: &'a EmbeddingCache,
    pub inner: &'a E,
}

impl<E: Embedder + ?Sized> Embedder for CachedEmbedder<'_, E> {
    fn model_id(&self) -> String {
        self.inner.model_id()
    }

    fn embed_batch(&self, documents: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let out = self.cache.fetch_or_embed_many(self.inner, documents)?;
        check_batch(&out, documents.len())?;
        Ok(out)
    }
}
