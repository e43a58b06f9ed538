use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Embedding, IndexError};
use crate::http::{HttpClient, HttpError};

/// Text in, fixed-length vector out.
pub trait Embedder: Send + Sync {
    fn backend_id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding, IndexError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, IndexError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

pub const MOCK_DIM: usize = 256;

/// Signed feature hashing over lowercase alphanumeric tokens, L2-normalized.
///
/// Texts sharing words land close together, which gives retrieval tests a
/// meaningful similarity structure without any model.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
    id: String,
}

impl MockEmbedder {
    pub fn new(seed: u64) -> Self {
        Self::with_dim(MOCK_DIM, seed)
    }

    pub fn with_dim(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        MockEmbedder {
            dim,
            seed,
            id: format!("mock-hash-{dim}-{seed}"),
        }
    }

    fn bucket(&self, token: &str) -> (usize, f64) {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest = hasher.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        let h = u64::from_le_bytes(word);
        let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
        ((h % self.dim as u64) as usize, sign)
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(0)
    }
}

impl Embedder for MockEmbedder {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, IndexError> {
        if text.trim().is_empty() {
            return Err(IndexError::EmptyText);
        }
        let mut values = vec![0.0; self.dim];
        let lower = text.to_lowercase();
        let mut any = false;
        for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let (i, sign) = self.bucket(token);
            values[i] += sign;
            any = true;
        }
        if !any || values.iter().all(|v| *v == 0.0) {
            // punctuation-only text, or tokens that cancelled out
            let (i, _) = self.bucket(&lower);
            values[i] = 1.0;
        }
        Embedding::normalized(values)
    }
}

/// An OpenAI-compatible `/embeddings` endpoint.
///
/// The API key is read from the environment variable named by
/// `api_key_env` at call time; it never appears in configs or logs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteEmbedderConfig {
    pub base_url: String,
    pub model: String,
    pub dim: usize,
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    60
}

pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    http: HttpClient,
    id: String,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Result<Self, IndexError> {
        let http = HttpClient::new(Duration::from_secs(config.timeout_secs))
            .map_err(|e| IndexError::Backend(e.to_string()))?;
        let id = format!("remote:{}", config.model);
        Ok(RemoteEmbedder { config, http, id })
    }
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingsDatum>,
}

#[derive(Deserialize)]
struct EmbeddingsDatum {
    embedding: Vec<f64>,
}

impl Embedder for RemoteEmbedder {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, IndexError> {
        if text.trim().is_empty() {
            return Err(IndexError::EmptyText);
        }
        let key = std::env::var(&self.config.api_key_env)
            .map_err(|_| IndexError::Backend(format!("{} is not set", self.config.api_key_env)))?;
        let url = format!("{}/embeddings", self.config.base_url.trim_end_matches('/'));
        let body = serde_json::json!({ "model": self.config.model, "input": text });
        let response: EmbeddingsResponse = self
            .http
            .post_json(&url, Some(&key), &body)
            .and_then(|v| serde_json::from_value(v).map_err(|e| HttpError::Decode(e.to_string())))
            .map_err(|e| match e {
                HttpError::RateLimited { retry_after } => IndexError::Quota { retry_after },
                other => IndexError::Backend(other.to_string()),
            })?;
        let values = response
            .data
            .into_iter()
            .next()
            .ok_or_else(|| IndexError::Backend("empty embeddings response".into()))?
            .embedding;
        if values.len() != self.config.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.config.dim,
                found: values.len(),
            });
        }
        Embedding::new(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_unit_norm() {
        let e = MockEmbedder::default();
        for text in ["What is the most popular fruit in the UK?", "!!!", "a", "ÉTÉ à Paris"] {
            let a = e.embed(text).unwrap();
            let b = e.embed(text).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.dim(), MOCK_DIM);
            let norm: f64 = a.values().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9, "{text}: {norm}");
        }
    }

    #[test]
    fn shared_words_are_closer() {
        let e = MockEmbedder::default();
        let q = e.embed("popular fruit in the UK").unwrap();
        let near = e.embed("fruit is popular in the UK").unwrap();
        let far = e.embed("Gangan drumming is an art concept in Nigeria").unwrap();
        assert!(q.dot(&near) > q.dot(&far));
    }

    #[test]
    fn seed_changes_vectors() {
        let a = MockEmbedder::new(1).embed("fruit").unwrap();
        let b = MockEmbedder::new(2).embed("fruit").unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn empty_text_rejected() {
        assert!(matches!(
            MockEmbedder::default().embed("  "),
            Err(IndexError::EmptyText)
        ));
        let remote = RemoteEmbedder::new(RemoteEmbedderConfig {
            base_url: "http://127.0.0.1:9".into(),
            model: "m".into(),
            dim: 4,
            api_key_env: "CULTURAG_TEST_UNSET_KEY".into(),
            timeout_secs: 1,
        })
        .unwrap();
        assert!(matches!(remote.embed(""), Err(IndexError::EmptyText)));
    }
}
