//! Thin blocking JSON-over-HTTPS client shared by the remote backends.

use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    /// Connection failures, timeouts and 5xx responses.
    #[error("transport error: {0}")]
    Transport(String),
    /// HTTP 429.
    #[error("rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    /// Any other non-success status.
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("could not decode response: {0}")]
    Decode(String),
}

impl HttpError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, HttpError::Transport(_) | HttpError::RateLimited { .. })
    }
}

#[derive(Debug, Clone)]
pub struct HttpClient {
    inner: reqwest::blocking::Client,
}

impl HttpClient {
    pub fn new(timeout: Duration) -> Result<Self, HttpError> {
        let inner = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| HttpError::Transport(e.to_string()))?;
        Ok(HttpClient { inner })
    }

    pub fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value, HttpError> {
        let mut request = self.inner.post(url).json(body);
        if let Some(token) = bearer {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| HttpError::Transport(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 {
            let retry_after = response
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(HttpError::RateLimited { retry_after });
        }
        if status.is_server_error() {
            let body = response.text().unwrap_or_default();
            return Err(HttpError::Transport(format!("HTTP {}: {body}", status.as_u16())));
        }
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Err(HttpError::Status {
                status: status.as_u16(),
                body,
            });
        }
        response.json::<Value>().map_err(|e| HttpError::Decode(e.to_string()))
    }
}
