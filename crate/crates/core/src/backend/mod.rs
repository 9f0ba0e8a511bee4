//! Chat-completion backends and the retrying, concurrency-bounded gateway in front of them.
//!
//! A [`Backend`] performs exactly one attempt. The [`Gateway`] owns retry,
//! backoff and the global in-flight bound, so the same policy applies to
//! HTTP endpoints and to the in-process mocks used by tests.

mod http;
mod mock;

use std::fmt;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, API_KEY_ENV};
pub use mock::{FlakyBackend, MalformedMode, MockBackend, MockKind};

use crate::ranking::PassageId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }
}

/// What a request is asking the model to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Rerank,
    SelectPositives,
    SelectHardNegatives,
    ListwiseLabel,
}

/// Side-channel metadata that never goes over the wire. Mocks use it to
/// answer without parsing prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestContext {
    pub task: Task,
    pub qid: String,
    /// Passage ids in prompt order; local index `k` maps to `passage_ids[k - 1]`.
    pub passage_ids: Vec<PassageId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub id: String,
    pub messages: Vec<ChatMessage>,
    pub context: Option<RequestContext>,
}

impl ChatRequest {
    pub fn new(id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            id: id.into(),
            messages,
            context: None,
        }
    }

    pub fn with_context(mut self, context: RequestContext) -> Self {
        self.context = Some(context);
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    /// Reasoning returned out of band by reasoning endpoints.
    pub reasoning: Option<String>,
    pub usage: Option<Usage>,
    pub latency: Duration,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            reasoning: None,
            usage: None,
            latency: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendErrorKind {
    /// Connection, timeout or other I/O failure.
    Transport,
    /// Non-success HTTP status.
    Status(u16),
    /// Response arrived but could not be understood.
    Protocol,
}

impl BackendErrorKind {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendErrorKind::Transport => true,
            BackendErrorKind::Status(code) => *code == 429 || (500..600).contains(code),
            BackendErrorKind::Protocol => false,
        }
    }
}

impl fmt::Display for BackendErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendErrorKind::Transport => f.write_str("transport error"),
            BackendErrorKind::Status(code) => write!(f, "http status {code}"),
            BackendErrorKind::Protocol => f.write_str("protocol error"),
        }
    }
}

#[derive(Debug, Clone, Error)]
#[error("request {request_id}: {kind} after {attempts} attempt(s): {message}")]
pub struct BackendError {
    pub kind: BackendErrorKind,
    pub message: String,
    pub request_id: String,
    pub attempts: u32,
}

impl BackendError {
    pub fn new(kind: BackendErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            request_id: String::new(),
            attempts: 0,
        }
    }

    pub fn transport(message: impl Into<String>) -> Self {
        Self::new(BackendErrorKind::Transport, message)
    }

    pub fn protocol(message: impl Into<String>) -> Self {
        Self::new(BackendErrorKind::Protocol, message)
    }
}

/// One attempt against a model endpoint.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).send(request)
    }
}

/// Endpoint and client settings. Credentials are read from the environment only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    pub retries: u32,
    pub backoff_base_ms: u64,
    pub concurrency: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: "default".into(),
            temperature: 0.0,
            max_tokens: 4096,
            timeout_secs: 120.0,
            retries: 2,
            backoff_base_ms: 500,
            concurrency: 4,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), crate::Error> {
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(crate::Error::invalid("backend timeout must be positive"));
        }
        if self.concurrency == 0 {
            return Err(crate::Error::invalid("backend concurrency must be at least 1"));
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.retries + 1,
            base_delay: Duration::from_millis(self.backoff_base_ms),
            max_delay: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts including the first.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        BackendConfig::default().retry_policy()
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_attempts: 1,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Wait before attempt `attempt + 1`, given `attempt >= 1` attempts so far.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay
            .checked_mul(factor)
            .unwrap_or(self.max_delay)
            .min(self.max_delay)
    }

    /// Every wait the policy could perform, in order.
    pub fn delays(&self) -> impl Iterator<Item = Duration> + '_ {
        (1..self.max_attempts).map(|a| self.delay_after(a))
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.freed.notify_one();
    }
}

/// A successful call plus how many attempts it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub response: ChatResponse,
    pub attempts: u32,
}

/// Shared front door to a backend. Cheap to share behind an `Arc`.
pub struct Gateway {
    backend: Box<dyn Backend>,
    retry: RetryPolicy,
    permits: Permits,
    concurrency: usize,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.name())
            .field("retry", &self.retry)
            .field("concurrency", &self.concurrency)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: impl Backend + 'static, retry: RetryPolicy, concurrency: usize) -> Self {
        let concurrency = concurrency.max(1);
        Self {
            backend: Box::new(backend),
            retry,
            permits: Permits::new(concurrency),
            concurrency,
        }
    }

    /// Gateway over a mock with no retries and a single permit per caller thread.
    pub fn mock(backend: MockBackend) -> Self {
        Self::new(backend, RetryPolicy::none(), usize::MAX >> 1)
    }

    pub fn from_config(backend: impl Backend + 'static, config: &BackendConfig) -> Self {
        Self::new(backend, config.retry_policy(), config.concurrency)
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn concurrency(&self) -> usize {
        self.concurrency
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }

    /// Sends `request`, retrying retryable failures with exponential backoff.
    /// The returned latency covers every attempt and wait.
    pub fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        if request.messages.is_empty() {
            let mut err = BackendError::protocol("request has no messages");
            err.request_id = request.id.clone();
            return Err(err);
        }
        let start = Instant::now();
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.permits.acquire();
                self.backend.send(request)
            };
            match result {
                Ok(mut response) => {
                    response.latency = start.elapsed();
                    return Ok(Completion {
                        response,
                        attempts: attempt,
                    });
                }
                Err(mut err) => {
                    err.request_id = request.id.clone();
                    err.attempts = attempt;
                    if !err.kind.is_retryable() || attempt >= self.retry.max_attempts {
                        return Err(err);
                    }
                    let wait = self.retry.delay_after(attempt);
                    log::warn!("{err}; retrying in {wait:?}");
                    std::thread::sleep(wait);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Failing(BackendErrorKind, AtomicUsize);

    impl Backend for Failing {
        fn name(&self) -> &str {
            "failing"
        }

        fn send(&self, _: &ChatRequest) -> Result<ChatResponse, BackendError> {
            self.1.fetch_add(1, Ordering::SeqCst);
            Err(BackendError::new(self.0.clone(), "nope"))
        }
    }

    fn req() -> ChatRequest {
        ChatRequest::new("r1", vec![ChatMessage::user("hi")])
    }

    fn quick(max_attempts: u32) -> RetryPolicy {
        RetryPolicy {
            max_attempts,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(4),
        }
    }

    #[test]
    fn retryable_classification() {
        assert!(BackendErrorKind::Transport.is_retryable());
        assert!(BackendErrorKind::Status(429).is_retryable());
        assert!(BackendErrorKind::Status(503).is_retryable());
        assert!(!BackendErrorKind::Status(400).is_retryable());
        assert!(!BackendErrorKind::Status(401).is_retryable());
        assert!(!BackendErrorKind::Protocol.is_retryable());
    }

    #[test]
    fn retries_stop_at_configured_attempts() {
        let backend = Arc::new(Failing(BackendErrorKind::Status(500), AtomicUsize::new(0)));
        let gw = Gateway::new(backend.clone(), quick(4), 1);
        let err = gw.complete(&req()).unwrap_err();
        assert_eq!(err.attempts, 4);
        assert_eq!(err.request_id, "r1");
        assert_eq!(backend.1.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn terminal_status_is_not_retried() {
        let backend = Arc::new(Failing(BackendErrorKind::Status(404), AtomicUsize::new(0)));
        let gw = Gateway::new(backend.clone(), quick(4), 1);
        let err = gw.complete(&req()).unwrap_err();
        assert_eq!(err.attempts, 1);
        assert_eq!(err.kind, BackendErrorKind::Status(404));
        assert_eq!(backend.1.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn flaky_backend_recovers_within_budget() {
        let flaky = FlakyBackend::new(MockBackend::identity(), 2);
        let gw = Gateway::new(flaky, quick(3), 1);
        let done = gw.complete(&req()).unwrap();
        assert_eq!(done.attempts, 3);
    }

    #[test]
    fn backoff_doubles_then_caps() {
        let p = RetryPolicy {
            max_attempts: 6,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(500),
        };
        let d: Vec<u64> = p.delays().map(|d| d.as_millis() as u64).collect();
        assert_eq!(d, vec![100, 200, 400, 500, 500]);
        assert_eq!(RetryPolicy::none().delays().count(), 0);
    }

    #[test]
    fn empty_request_rejected() {
        let gw = Gateway::mock(MockBackend::identity());
        let err = gw.complete(&ChatRequest::new("x", vec![])).unwrap_err();
        assert_eq!(err.kind, BackendErrorKind::Protocol);
    }

    #[test]
    fn permits_bound_concurrency() {
        use std::sync::atomic::AtomicUsize;

        struct Probe {
            live: AtomicUsize,
            peak: AtomicUsize,
        }
        impl Backend for Probe {
            fn name(&self) -> &str {
                "probe"
            }
            fn send(&self, _: &ChatRequest) -> Result<ChatResponse, BackendError> {
                let now = self.live.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(5));
                self.live.fetch_sub(1, Ordering::SeqCst);
                Ok(ChatResponse::text("ok"))
            }
        }

        let probe = Arc::new(Probe {
            live: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let gw = Gateway::new(probe.clone(), RetryPolicy::none(), 2);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| gw.complete(&req()).unwrap());
            }
        });
        assert!(probe.peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn config_validation() {
        let mut c = BackendConfig::default();
        assert!(c.validate().is_ok());
        c.concurrency = 0;
        assert!(c.validate().is_err());
        c.concurrency = 1;
        c.timeout_secs = 0.0;
        assert!(c.validate().is_err());
        assert_eq!(BackendConfig { retries: 2, ..Default::default() }.retry_policy().max_attempts, 3);
    }
}
