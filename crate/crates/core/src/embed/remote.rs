use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{check_batch, EmbedError, Embedder, EmbeddingVector};

type BatchSlot = Mutex<Option<Result<Vec<EmbeddingVector>, EmbedError>>>;

/// Environment variable holding the bearer token for the embedding service.
pub const API_KEY_ENV: &str = "CHATTER_ATLAS_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteEmbedderConfig {
    pub endpoint: String,
    pub model_id: String,
    pub task: String,
    pub batch_size: usize,
    pub max_chars: usize,
    pub retries: u32,
    /// First retry waits this long; each further retry doubles it.
    #[serde(with = "millis")]
    pub backoff_base: Duration,
    /// Batches in flight at once.
    pub concurrency: usize,
    #[serde(with = "millis")]
    pub timeout: Duration,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for RemoteEmbedderConfig {
    fn default() -> Self {
        RemoteEmbedderConfig {
            endpoint: String::new(),
            model_id: "text-embedding-004".into(),
            task: "SEMANTIC_SIMILARITY".into(),
            batch_size: 16,
            max_chars: 16_000,
            retries: 5,
            backoff_base: Duration::from_millis(500),
            concurrency: 4,
            timeout: Duration::from_secs(60),
            api_key: None,
        }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

impl RemoteEmbedderConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: &str| Err(EmbedError::Config(m.into()));
        if self.endpoint.is_empty() {
            return bad("remote embedder needs an endpoint URL");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.max_chars < 1 {
            return bad("max_chars must be >= 1");
        }
        if self.concurrency < 1 {
            return bad("concurrency must be >= 1");
        }
        Ok(())
    }

    /// Fills `api_key` from [`API_KEY_ENV`] when it is set.
    pub fn with_env_key(mut self) -> Self {
        if let Ok(key) = std::env::var(API_KEY_ENV) {
            if !key.is_empty() {
                self.api_key = Some(key);
            }
        }
        self
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    task: &'a str,
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// Client for the JSON embedding protocol:
/// `POST {"model","task","texts"}` → `{"embeddings": [[...], ...]}`.
pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    agent: ureq::Agent,
    truncated: AtomicUsize,
    requests: AtomicUsize,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Result<Self, EmbedError> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Ok(RemoteEmbedder {
            config,
            agent,
            truncated: AtomicUsize::new(0),
            requests: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &RemoteEmbedderConfig {
        &self.config
    }

    /// Documents cut to `max_chars` so far.
    pub fn truncated_count(&self) -> usize {
        self.truncated.load(Ordering::Relaxed)
    }

    /// HTTP requests issued so far, retries included.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    fn truncate<'d>(&self, doc: &'d str) -> &'d str {
        match doc.char_indices().nth(self.config.max_chars) {
            Some((cut, _)) => {
                self.truncated.fetch_add(1, Ordering::Relaxed);
                &doc[..cut]
            }
            None => doc,
        }
    }

    fn send_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let body = serde_json::to_vec(&EmbedRequest {
            model: &self.config.model_id,
            task: &self.config.task,
            texts,
        })
        .map_err(|e| EmbedError::Input(e.to_string()))?;

        let mut attempt = 0u32;
        loop {
            let outcome = self.post(&body);
            let retry_reason = match outcome {
                Attempt::Done(result) => {
                    let vectors = result?;
                    check_batch(&vectors, texts.len())?;
                    return Ok(vectors);
                }
                Attempt::Retry(reason) => reason,
            };
            if attempt >= self.config.retries {
                return Err(EmbedError::Backend(format!(
                    "giving up after {} attempts: {retry_reason}",
                    attempt + 1
                )));
            }
            let wait = self.config.backoff_base.saturating_mul(1u32 << attempt.min(20));
            log::warn!("embedding request failed ({retry_reason}); retrying in {wait:?}");
            thread::sleep(wait);
            attempt += 1;
        }
    }

    fn post(&self, body: &[u8]) -> Attempt {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut req = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(e @ (ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed)) => {
                return Attempt::Retry(e.to_string())
            }
            Err(e) => return Attempt::Done(Err(EmbedError::Backend(e.to_string()))),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().with_config().limit(1 << 28).read_to_string() {
            Ok(t) => t,
            Err(e @ (ureq::Error::Timeout(_) | ureq::Error::Io(_))) => return Attempt::Retry(e.to_string()),
            Err(e) => return Attempt::Done(Err(EmbedError::Protocol(e.to_string()))),
        };
        match status {
            200..=299 => Attempt::Done(parse_response(&text)),
            429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
            _ => Attempt::Done(Err(EmbedError::Rejected {
                status,
                body: text.chars().take(500).collect(),
            })),
        }
    }
}

enum Attempt {
    Done(Result<Vec<EmbeddingVector>, EmbedError>),
    Retry(String),
}

fn parse_response(text: &str) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let resp: EmbedResponse =
        serde_json::from_str(text).map_err(|e| EmbedError::Protocol(format!("bad response body: {e}")))?;
    resp.embeddings
        .into_iter()
        .map(|v| EmbeddingVector::new(v).map_err(|e| EmbedError::Protocol(e.to_string())))
        .collect()
}

impl Embedder for RemoteEmbedder {
    fn model_id(&self) -> String {
        format!("remote:{}:{}", self.config.model_id, self.config.task)
    }

    /// Splits into batches of `batch_size`, keeps up to `concurrency` of them
    /// in flight, and reassembles the results in input order.
    fn embed_batch(&self, documents: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let docs: Vec<&str> = documents.iter().map(|d| self.truncate(d)).collect();
        let batches: Vec<&[&str]> = docs.chunks(self.config.batch_size).collect();
        let results: Vec<BatchSlot> =
            batches.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.config.concurrency.min(batches.len());

        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(batch) = batches.get(i) else { break };
                    let r = self.send_batch(batch);
                    let failed = r.is_err();
                    *results[i].lock().unwrap_or_else(|p| p.into_inner()) = Some(r);
                    if failed {
                        // stop handing out work
                        next.store(batches.len(), Ordering::SeqCst);
                    }
                });
            }
        });

        let mut out = Vec::with_capacity(documents.len());
        for slot in results {
            match slot.into_inner().unwrap_or_else(|p| p.into_inner()) {
                Some(r) => out.extend(r?),
                None => {
                    return Err(EmbedError::Backend(
                        "embedding aborted after an earlier batch failed".into(),
                    ))
                }
            }
        }
        check_batch(&out, documents.len())?;
        Ok(out)
    }
}

/// One-shot helper: embed `documents` with a fresh client.
pub fn remote_embed_batch(config: &RemoteEmbedderConfig, documents: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
    RemoteEmbedder::new(config.clone())?.embed_batch(documents)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_counts_chars() {
        let e = RemoteEmbedder::new(RemoteEmbedderConfig {
            endpoint: "http://127.0.0.1:9".into(),
            max_chars: 3,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(e.truncate("äöüß"), "äöü");
        assert_eq!(e.truncate("abc"), "abc");
        assert_eq!(e.truncated_count(), 1);
    }

    #[test]
    fn config_validation() {
        assert!(RemoteEmbedderConfig::default().validate().is_err());
        let ok = RemoteEmbedderConfig {
            endpoint: "http://x".into(),
            ..Default::default()
        };
        assert!(ok.validate().is_ok());
        assert!(RemoteEmbedderConfig { batch_size: 0, ..ok.clone() }.validate().is_err());
        assert!(RemoteEmbedderConfig { max_chars: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn response_parsing() {
        assert_eq!(parse_response(r#"{"embeddings":[[1,2],[3,4]]}"#).unwrap().len(), 2);
        assert!(matches!(parse_response("{}"), Err(EmbedError::Protocol(_))));
        assert!(matches!(parse_response(r#"{"embeddings":[[]]}"#), Err(EmbedError::Protocol(_))));
    }
}
