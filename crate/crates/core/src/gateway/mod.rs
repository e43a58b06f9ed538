//! Uniform generation interface over remote chat, remote search-grounded
//! and scripted mock backends.
//!
//! A [`Gateway`] owns the registered backends, admits calls through a
//! per-backend [`RateLimiter`], retries transport and quota failures with
//! exponential backoff, and can log every exchange as a replay fixture.

mod limiter;
mod mock;
mod remote;
mod replay;

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use limiter::{Permit, RateLimiter};
pub use mock::{ScriptEntry, ScriptedBackend, ScriptedReply};
pub use remote::{ChatCompletionBackend, ChatCompletionConfig, VertexGeminiBackend, VertexGeminiConfig};
pub use replay::{read_fixture, FixtureRecord, RecordingBackend, ReplayBackend};

pub const DEFAULT_TEMPERATURE: f64 = 0.5;
pub const DEFAULT_MAX_OUTPUT: u32 = 1024;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no backend registered under {0:?}")]
    UnknownBackend(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("quota exhausted (retry after {retry_after:?})")]
    Quota { retry_after: Option<Duration> },
    #[error("no scripted response for prompt fingerprint {fingerprint}")]
    Unscripted { fingerprint: String },
    #[error("backend {0:?} does not support search grounding")]
    GroundingUnsupported(String),
    #[error("backend returned HTTP {status}: {body}")]
    Api { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Decode(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<GatewayError> },
    #[error("missing credentials: environment variable {0} is not set")]
    MissingCredentials(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport(_) | GatewayError::Quota { .. })
    }
}

impl From<crate::http::HttpError> for GatewayError {
    fn from(e: crate::http::HttpError) -> Self {
        use crate::http::HttpError;
        match e {
            HttpError::Transport(m) => GatewayError::Transport(m),
            HttpError::RateLimited { retry_after } => GatewayError::Quota { retry_after },
            HttpError::Status { status, body } => GatewayError::Api { status, body },
            HttpError::Decode(m) => GatewayError::Decode(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_output: u32,
    pub backend: String,
    /// Distinguishes repeated samples of the same prompt in call logs.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub sample: u32,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl GenerationRequest {
    pub fn new(backend: impl Into<String>, prompt: impl Into<String>) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_output: DEFAULT_MAX_OUTPUT,
            backend: backend.into(),
            sample: 0,
        }
    }

    pub fn with_sample(mut self, sample: u32) -> Self {
        self.sample = sample;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output == 0 {
            return Err(GatewayError::InvalidRequest("max_output must be positive".into()));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.prompt)
    }
}

/// One web source attached to a search-grounded answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Citation {
    pub uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    /// Byte span of the supported answer segment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snippet: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    /// Present only for search-grounded calls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding: Option<Vec<Citation>>,
    /// The service's grounding metadata, verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding_metadata: Option<Value>,
    pub backend: String,
    pub latency_ms: u64,
}

/// Whitespace-collapsed SHA-256 of a prompt, 32 hex chars.
///
/// Prompts that differ only in runs of whitespace share a fingerprint.
pub fn fingerprint(prompt: &str) -> String {
    let mut hasher = Sha256::new();
    for (i, word) in prompt.split_whitespace().enumerate() {
        if i > 0 {
            hasher.update(b" ");
        }
        hasher.update(word.as_bytes());
    }
    hex::encode(&hasher.finalize()[..16])
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn supports_grounding(&self) -> bool {
        false
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, GatewayError>;

    fn generate_search_grounded(&self, _req: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        Err(GatewayError::GroundingUnsupported(self.id().to_owned()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Backoff before retry number `attempt` (0-based): `base * 2^attempt`,
    /// capped, but never shorter than a server-provided `retry_after`.
    pub fn delay(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        let exp = self
            .base_delay_ms
            .saturating_mul(1u64.checked_shl(attempt).unwrap_or(u64::MAX));
        let backoff = Duration::from_millis(exp.min(self.max_delay_ms));
        retry_after.map_or(backoff, |r| r.max(backoff))
    }
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

struct Registered {
    backend: Arc<dyn Backend>,
    limiter: Arc<RateLimiter>,
}

pub struct Gateway {
    backends: HashMap<String, Registered>,
    retry: RetryPolicy,
    sleep: Sleeper,
    call_log: Option<Mutex<BufWriter<File>>>,
}

impl Default for Gateway {
    fn default() -> Self {
        Self::new()
    }
}

impl Gateway {
    pub fn new() -> Self {
        Gateway {
            backends: HashMap::new(),
            retry: RetryPolicy::default(),
            sleep: Arc::new(std::thread::sleep),
            call_log: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Replaces `thread::sleep` for backoff waits.
    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Arc::new(sleep);
        self
    }

    /// Appends every successful exchange to `path` in fixture format.
    pub fn with_call_log(mut self, path: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.call_log = Some(Mutex::new(BufWriter::new(file)));
        Ok(self)
    }

    pub fn register(&mut self, backend: Arc<dyn Backend>, limiter: RateLimiter) {
        self.backends.insert(
            backend.id().to_owned(),
            Registered {
                backend,
                limiter: Arc::new(limiter),
            },
        );
    }

    pub fn has_backend(&self, id: &str) -> bool {
        self.backends.contains_key(id)
    }

    pub fn supports_grounding(&self, id: &str) -> bool {
        self.backends.get(id).is_some_and(|r| r.backend.supports_grounding())
    }

    pub fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        self.call(req, false)
    }

    pub fn generate_search_grounded(&self, req: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        self.call(req, true)
    }

    fn call(&self, req: &GenerationRequest, grounded: bool) -> Result<GenerationResponse, GatewayError> {
        req.validate()?;
        let reg = self
            .backends
            .get(&req.backend)
            .ok_or_else(|| GatewayError::UnknownBackend(req.backend.clone()))?;
        if grounded && !reg.backend.supports_grounding() {
            return Err(GatewayError::GroundingUnsupported(req.backend.clone()));
        }
        let mut attempt = 0;
        let response = loop {
            let result = {
                let _permit = reg.limiter.acquire();
                if grounded {
                    reg.backend.generate_search_grounded(req)
                } else {
                    reg.backend.generate(req)
                }
            };
            match result {
                Ok(r) => break r,
                Err(e) if e.is_retryable() && attempt < self.retry.max_retries => {
                    let retry_after = match &e {
                        GatewayError::Quota { retry_after } => *retry_after,
                        _ => None,
                    };
                    log::warn!("{} attempt {} failed: {e}; retrying", req.backend, attempt + 1);
                    (self.sleep)(self.retry.delay(attempt, retry_after));
                    attempt += 1;
                }
                Err(e) if e.is_retryable() => {
                    return Err(GatewayError::Exhausted {
                        attempts: attempt + 1,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        };
        if let Some(log) = &self.call_log {
            let record = FixtureRecord {
                fingerprint: req.fingerprint(),
                grounded,
                request: req.clone(),
                response: response.clone(),
            };
            let mut w = log.lock().expect("call log poisoned");
            serde_json::to_writer(&mut *w, &record).map_err(|e| GatewayError::Decode(e.to_string()))?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Ok(response)
    }
}
