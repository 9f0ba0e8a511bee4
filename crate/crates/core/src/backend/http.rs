//! Client for OpenAI-style `chat/completions` endpoints.
//!
//! Request body:
//!
//! ```json
//! {"model": "...", "messages": [{"role": "user", "content": "..."}],
//!  "temperature": 0.0, "max_tokens": 4096}
//! ```
//!
//! The reply must carry `choices[0].message.content`; `reasoning_content`
//! and `usage.{prompt_tokens,completion_tokens}` are read when present.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendConfig, BackendError, BackendErrorKind, ChatMessage, ChatRequest, ChatResponse, Usage};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "RERANK_API_KEY";

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    reasoning_content: Option<String>,
}

pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    temperature: f64,
    max_tokens: u32,
    api_key: Option<String>,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<set>"))
            .finish()
    }
}

impl HttpBackend {
    /// Builds a client, taking the API key from [`API_KEY_ENV`] if set.
    pub fn new(config: &BackendConfig) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, key)
    }

    pub fn with_api_key(config: &BackendConfig, api_key: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            endpoint: config.endpoint.clone(),
            model: config.model.clone(),
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            api_key,
        }
    }
}

fn transport(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::StatusCode(code) => {
            BackendError::new(BackendErrorKind::Status(code), "unexpected status")
        }
        other => BackendError::transport(other.to_string()),
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        &self.endpoint
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let body = WireRequest {
            model: &self.model,
            messages: &request.messages,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        };
        let start = Instant::now();
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport)?;
        if !(200..300).contains(&status) {
            let snippet: String = text.chars().take(200).collect();
            return Err(BackendError::new(BackendErrorKind::Status(status), snippet));
        }
        let wire: WireResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::protocol(format!("bad response body: {e}")))?;
        let message = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::protocol("response has no choices"))?
            .message;
        Ok(ChatResponse {
            text: message.content.unwrap_or_default(),
            reasoning: message.reasoning_content.filter(|r| !r.is_empty()),
            usage: wire.usage,
            latency: start.elapsed(),
        })
    }
}
