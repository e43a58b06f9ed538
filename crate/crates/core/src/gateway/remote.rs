//! HTTPS backends. Credentials come only from environment variables named
//! in the backend config.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, Citation, GatewayError, GenerationRequest, GenerationResponse};
use crate::http::HttpClient;

fn default_timeout_secs() -> u64 {
    120
}

fn credential(var: &str) -> Result<String, GatewayError> {
    std::env::var(var).map_err(|_| GatewayError::MissingCredentials(var.to_owned()))
}

/// An OpenAI-compatible `/chat/completions` endpoint (GPT, or any local
/// server speaking the same protocol, e.g. for OLMo).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatCompletionConfig {
    pub id: String,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token. `None`
    /// for unauthenticated local servers.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

pub struct ChatCompletionBackend {
    config: ChatCompletionConfig,
    http: HttpClient,
}

impl ChatCompletionBackend {
    pub fn new(config: ChatCompletionConfig) -> Result<Self, GatewayError> {
        let http = HttpClient::new(Duration::from_secs(config.timeout_secs))?;
        Ok(ChatCompletionBackend { config, http })
    }
}

impl Backend for ChatCompletionBackend {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        let key = self.config.api_key_env.as_deref().map(credential).transpose()?;
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": req.prompt }],
            "temperature": req.temperature,
            "max_tokens": req.max_output,
        });
        let start = Instant::now();
        let value = self.http.post_json(&url, key.as_deref(), &body)?;
        let text = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| GatewayError::Decode("missing choices[0].message.content".into()))?;
        Ok(GenerationResponse {
            text: text.to_owned(),
            grounding: None,
            grounding_metadata: None,
            backend: self.config.id.clone(),
            latency_ms: start.elapsed().as_millis() as u64,
        })
    }
}

/// Gemini on Vertex AI via `generateContent`, optionally with the Google
/// Search grounding tool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VertexGeminiConfig {
    pub id: String,
    pub project: String,
    #[serde(default = "default_location")]
    pub location: String,
    pub model: String,
    /// Environment variable holding an OAuth access token
    /// (e.g. from `gcloud auth print-access-token`).
    pub access_token_env: String,
    /// Overrides the regional endpoint; mainly for tests.
    #[serde(default)]
    pub base_url: Option<String>,
    /// `google_search_retrieval` (Gemini 1.5) or `google_search` (later models).
    #[serde(default = "default_search_tool")]
    pub search_tool: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_location() -> String {
    "us-central1".into()
}

fn default_search_tool() -> String {
    "google_search_retrieval".into()
}

pub struct VertexGeminiBackend {
    config: VertexGeminiConfig,
    http: HttpClient,
}

impl VertexGeminiBackend {
    pub fn new(config: VertexGeminiConfig) -> Result<Self, GatewayError> {
        let http = HttpClient::new(Duration::from_secs(config.timeout_secs))?;
        Ok(VertexGeminiBackend { config, http })
    }

    fn url(&self) -> String {
        let c = &self.config;
        let base = c
            .base_url
            .clone()
            .unwrap_or_else(|| format!("https://{}-aiplatform.googleapis.com", c.location));
        format!(
            "{}/v1/projects/{}/locations/{}/publishers/google/models/{}:generateContent",
            base.trim_end_matches('/'),
            c.project,
            c.location,
            c.model
        )
    }

    pub(crate) fn request_body(&self, req: &GenerationRequest, grounded: bool) -> Value {
        let mut body = json!({
            "contents": [{ "role": "user", "parts": [{ "text": req.prompt }] }],
            "generationConfig": {
                "temperature": req.temperature,
                "maxOutputTokens": req.max_output,
            },
        });
        if grounded {
            let tool = if self.config.search_tool == "google_search" {
                json!({ "googleSearch": {} })
            } else {
                json!({ "googleSearchRetrieval": {} })
            };
            body["tools"] = json!([tool]);
        }
        body
    }

    fn call(&self, req: &GenerationRequest, grounded: bool) -> Result<GenerationResponse, GatewayError> {
        let token = credential(&self.config.access_token_env)?;
        let start = Instant::now();
        let value = self
            .http
            .post_json(&self.url(), Some(&token), &self.request_body(req, grounded))?;
        let mut response = parse_generate_content(&value, grounded)?;
        response.backend = self.config.id.clone();
        response.latency_ms = start.elapsed().as_millis() as u64;
        Ok(response)
    }
}

/// Extracts answer text and, for grounded calls, the grounding metadata
/// (verbatim) plus a flat citation list.
pub(crate) fn parse_generate_content(value: &Value, grounded: bool) -> Result<GenerationResponse, GatewayError> {
    let candidate = value
        .pointer("/candidates/0")
        .ok_or_else(|| GatewayError::Decode("response has no candidates".into()))?;
    let text: String = candidate
        .pointer("/content/parts")
        .and_then(Value::as_array)
        .map(|parts| {
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect()
        })
        .unwrap_or_default();
    let (grounding, grounding_metadata) = if grounded {
        let metadata = candidate.get("groundingMetadata").cloned();
        let citations = metadata.as_ref().map(citations_from).unwrap_or_default();
        (Some(citations), metadata)
    } else {
        (None, None)
    };
    Ok(GenerationResponse {
        text,
        grounding,
        grounding_metadata,
        backend: String::new(),
        latency_ms: 0,
    })
}

fn citations_from(metadata: &Value) -> Vec<Citation> {
    let chunks: Vec<(String, Option<String>)> = metadata
        .get("groundingChunks")
        .and_then(Value::as_array)
        .map(|chunks| {
            chunks
                .iter()
                .map(|c| {
                    let web = c.get("web").or_else(|| c.get("retrievedContext"));
                    let field = |k: &str| web.and_then(|w| w.get(k)).and_then(Value::as_str);
                    (
                        field("uri").unwrap_or_default().to_owned(),
                        field("title").map(str::to_owned),
                    )
                })
                .collect()
        })
        .unwrap_or_default();
    let supports = metadata
        .get("groundingSupports")
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();
    if supports.is_empty() {
        return chunks
            .into_iter()
            .map(|(uri, title)| Citation {
                uri,
                title,
                span: None,
                snippet: None,
            })
            .collect();
    }
    let mut out = Vec::new();
    for support in &supports {
        let segment = support.get("segment");
        let index = |k: &str| segment.and_then(|s| s.get(k)).and_then(Value::as_u64);
        let span = index("endIndex").map(|end| (index("startIndex").unwrap_or(0) as usize, end as usize));
        let snippet = segment
            .and_then(|s| s.get("text"))
            .and_then(Value::as_str)
            .map(str::to_owned);
        let indices = support
            .get("groundingChunkIndices")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();
        for i in indices.iter().filter_map(Value::as_u64) {
            if let Some((uri, title)) = chunks.get(i as usize) {
                out.push(Citation {
                    uri: uri.clone(),
                    title: title.clone(),
                    span,
                    snippet: snippet.clone(),
                });
            }
        }
    }
    out
}

impl Backend for VertexGeminiBackend {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn supports_grounding(&self) -> bool {
        true
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        self.call(req, false)
    }

    fn generate_search_grounded(&self, req: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        self.call(req, true)
    }
}
