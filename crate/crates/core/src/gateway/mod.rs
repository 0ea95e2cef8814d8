//! Transport layer to OpenAI-compatible chat-completions endpoints.
//!
//! The [`Gateway`] wraps a [`Transport`] with bounded concurrency, retry with
//! exponential backoff, and a content-addressed response cache keyed by a
//! stable digest of (model, messages, temperature, top_p, max_tokens,
//! seed_tag). A fixture-backed transport makes whole pipeline runs
//! deterministic and network-free in tests.

mod cache;
mod fixtures;
mod http;
mod transport;

pub use cache::{request_digest, ResponseCache};
pub use fixtures::{replay, FixtureStore, FixtureTransport};
pub use http::{EndpointConfig, HttpTransport};
pub use transport::Transport;

use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Chat message role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One chat message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Sampling parameters shared by requests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.6,
            top_p: 0.95,
            max_tokens: 32_768,
        }
    }
}

impl SamplingParams {
    /// Greedy settings used for judge calls.
    pub fn greedy() -> Self {
        SamplingParams {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 32_768,
        }
    }
}

/// A single chat-completions request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    /// Disambiguates repeated sampling of the same prompt; folded into the
    /// cache key so each sample is stored as a distinct generation.
    pub seed_tag: String,
}

impl CompletionRequest {
    pub fn new(
        model: impl Into<String>,
        messages: Vec<Message>,
        sampling: SamplingParams,
        seed_tag: impl Into<String>,
    ) -> Self {
        CompletionRequest {
            model: model.into(),
            messages,
            temperature: sampling.temperature,
            top_p: sampling.top_p,
            max_tokens: sampling.max_tokens,
            seed_tag: seed_tag.into(),
        }
    }

    fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest(
                "messages must be non-empty".into(),
            ));
        }
        if self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(
                "temperature must be >= 0".into(),
            ));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::InvalidRequest(
                "top_p must be in (0, 1]".into(),
            ));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Why the endpoint stopped generating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

/// The first choice of a chat completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub content: String,
    /// Separate reasoning channel, when the endpoint reports one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    pub finish_reason: FinishReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_completion_tokens: Option<u64>,
    /// True when the result was served from the response cache.
    #[serde(default)]
    pub cached: bool,
}

/// Retry schedule for transient transport failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        // 5 attempts, 1s doubling, retry on 408/429/5xx/timeout only.
        RetryPolicy {
            max_attempts: 5,
            initial_backoff_ms: 1000,
        }
    }
}

impl RetryPolicy {
    fn backoff_ms(&self, attempt: u32) -> u64 {
        self.initial_backoff_ms
            .saturating_mul(1u64 << attempt.min(16))
    }
}

/// One failed attempt, kept for the exhausted-retries error.
#[derive(Debug, Clone)]
pub struct AttemptFailure {
    pub attempt: u32,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("non-retryable endpoint error (status {status}): {message}")]
    NonRetryable { status: u16, message: String },
    #[error("retries exhausted after {} attempts: {}", attempts.len(), summarize_attempts(attempts))]
    RetriesExhausted { attempts: Vec<AttemptFailure> },
    #[error("missing fixture for digest {digest}; nearest known: [{}]", nearest.join(", "))]
    MissingFixture {
        digest: String,
        nearest: Vec<String>,
    },
    #[error("cache I/O error at {path}: {source}")]
    Cache {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed cache entry at {path}: {source}")]
    CacheFormat {
        path: String,
        source: serde_json::Error,
    },
    #[error("transport error: {0}")]
    Transport(String),
}

fn summarize_attempts(attempts: &[AttemptFailure]) -> String {
    attempts
        .iter()
        .map(|a| format!("#{}: {}", a.attempt, a.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Outcome of one transport attempt.
pub enum TransportOutcome {
    Success(CompletionResult),
    /// 408/429/5xx/timeout — eligible for retry.
    Transient(String),
    /// Authentication, bad request, and other permanent failures.
    Fatal {
        status: u16,
        message: String,
    },
}

// Counting semaphore bounding in-flight requests.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap() += 1;
        self.sem.cv.notify_one();
    }
}

/// Completion gateway: transport + retry + cache + concurrency bound.
pub struct Gateway {
    transport: Box<dyn Transport>,
    cache: Option<ResponseCache>,
    policy: RetryPolicy,
    semaphore: Semaphore,
    /// Test hook: sleeps are skipped when zero.
    backoff_scale: f64,
}

impl Gateway {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        Gateway {
            transport,
            cache: None,
            policy: RetryPolicy::default(),
            semaphore: Semaphore::new(8),
            backoff_scale: 1.0,
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_concurrency(mut self, max_in_flight: usize) -> Self {
        self.semaphore = Semaphore::new(max_in_flight);
        self
    }

    /// Disable retry sleeps (unit tests only).
    pub fn without_backoff_sleep(mut self) -> Self {
        self.backoff_scale = 0.0;
        self
    }

    /// Issue a completion with the gateway's default retry policy.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        self.complete_with_policy(request, &self.policy.clone())
    }

    /// Issue a completion, consulting the cache first. On transient failure
    /// the call is retried with exponential backoff up to
    /// `policy.max_attempts`; non-retryable failures surface immediately.
    pub fn complete_with_policy(
        &self,
        request: &CompletionRequest,
        policy: &RetryPolicy,
    ) -> Result<CompletionResult, GatewayError> {
        request.validate()?;
        let digest = request_digest(request);

        if let Some(cache) = &self.cache {
            if let Some(mut hit) = cache.get(&digest)? {
                hit.cached = true;
                return Ok(hit);
            }
        }

        let mut attempts = Vec::new();
        for attempt in 0..policy.max_attempts.max(1) {
            if attempt > 0 {
                let ms = (policy.backoff_ms(attempt - 1) as f64 * self.backoff_scale) as u64;
                if ms > 0 {
                    std::thread::sleep(std::time::Duration::from_millis(ms));
                }
            }
            let _permit = self.semaphore.acquire();
            match self.transport.send(request) {
                TransportOutcome::Success(mut result) => {
                    result.cached = false;
                    if let Some(cache) = &self.cache {
                        cache.put(&digest, &result)?;
                    }
                    return Ok(result);
                }
                TransportOutcome::Transient(reason) => {
                    attempts.push(AttemptFailure {
                        attempt: attempt + 1,
                        reason,
                    });
                }
                TransportOutcome::Fatal { status, message } => {
                    return Err(GatewayError::NonRetryable { status, message });
                }
            }
        }
        Err(GatewayError::RetriesExhausted { attempts })
    }
}

/// Split a completion into (reasoning trace, final answer-bearing text).
///
/// Preference order: a separate reasoning channel wins; otherwise the first
/// `<think>...</think>` block is the trace and the surrounding text is the
/// final text; otherwise the whole content serves as both.
pub fn extract_reasoning(result: &CompletionResult) -> (String, String) {
    if let Some(reasoning) = &result.reasoning {
        return (reasoning.clone(), result.content.clone());
    }
    let content = &result.content;
    if let Some(open) = content.find("<think>") {
        let interior_start = open + "<think>".len();
        if let Some(close_rel) = content[interior_start..].find("</think>") {
            let close = interior_start + close_rel;
            let trace = content[interior_start..close].to_string();
            let mut final_text = String::with_capacity(content.len());
            final_text.push_str(&content[..open]);
            final_text.push_str(&content[close + "</think>".len()..]);
            return (trace, final_text);
        }
    }
    (content.clone(), content.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn result(content: &str) -> CompletionResult {
        CompletionResult {
            content: content.to_string(),
            reasoning: None,
            finish_reason: FinishReason::Stop,
            reported_completion_tokens: Some(10),
            cached: false,
        }
    }

    struct Scripted {
        calls: AtomicUsize,
        fail_first: usize,
        fatal: bool,
    }

    impl Transport for Scripted {
        fn send(&self, _request: &CompletionRequest) -> TransportOutcome {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if self.fatal {
                return TransportOutcome::Fatal {
                    status: 401,
                    message: "bad key".into(),
                };
            }
            if n < self.fail_first {
                TransportOutcome::Transient(format!("HTTP 503 (attempt {})", n + 1))
            } else {
                TransportOutcome::Success(result("ok"))
            }
        }
    }

    fn request(seed: &str) -> CompletionRequest {
        CompletionRequest::new(
            "model-x",
            vec![Message::user("hello")],
            SamplingParams::default(),
            seed,
        )
    }

    #[test]
    fn two_transient_failures_then_success_within_three_attempts() {
        let transport = Scripted {
            calls: AtomicUsize::new(0),
            fail_first: 2,
            fatal: false,
        };
        let gateway = Gateway::new(Box::new(transport))
            .with_policy(RetryPolicy {
                max_attempts: 3,
                initial_backoff_ms: 1,
            })
            .without_backoff_sleep();
        let out = gateway.complete(&request("s")).unwrap();
        assert_eq!(out.content, "ok");
    }

    #[test]
    fn exhausted_retries_carry_attempt_log() {
        let transport = Scripted {
            calls: AtomicUsize::new(0),
            fail_first: 10,
            fatal: false,
        };
        let gateway = Gateway::new(Box::new(transport))
            .with_policy(RetryPolicy {
                max_attempts: 2,
                initial_backoff_ms: 1,
            })
            .without_backoff_sleep();
        match gateway.complete(&request("s")) {
            Err(GatewayError::RetriesExhausted { attempts }) => assert_eq!(attempts.len(), 2),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn authentication_failure_is_immediate() {
        let transport = Scripted {
            calls: AtomicUsize::new(0),
            fail_first: 0,
            fatal: true,
        };
        let gateway = Gateway::new(Box::new(transport)).without_backoff_sleep();
        match gateway.complete(&request("s")) {
            Err(GatewayError::NonRetryable { status, .. }) => assert_eq!(status, 401),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn identical_request_hits_cache_with_identical_content() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let transport = Scripted {
            calls: AtomicUsize::new(0),
            fail_first: 0,
            fatal: false,
        };
        let gateway = Gateway::new(Box::new(transport)).with_cache(cache);

        let first = gateway.complete(&request("s")).unwrap();
        assert!(!first.cached);
        let second = gateway.complete(&request("s")).unwrap();
        assert!(second.cached);
        assert_eq!(first.content, second.content);
    }

    #[test]
    fn invalid_request_rejected_before_transport() {
        let transport = Scripted {
            calls: AtomicUsize::new(0),
            fail_first: 0,
            fatal: false,
        };
        let gateway = Gateway::new(Box::new(transport));
        let mut req = request("s");
        req.top_p = 0.0;
        assert!(matches!(
            gateway.complete(&req),
            Err(GatewayError::InvalidRequest(_))
        ));
    }

    #[test]
    fn extract_reasoning_splits_think_block() {
        let r = result("<think>steps</think>Answer: X");
        assert_eq!(
            extract_reasoning(&r),
            ("steps".to_string(), "Answer: X".to_string())
        );
    }

    #[test]
    fn extract_reasoning_prefers_reasoning_channel() {
        let mut r = result("X");
        r.reasoning = Some("steps".into());
        assert_eq!(
            extract_reasoning(&r),
            ("steps".to_string(), "X".to_string())
        );
    }

    #[test]
    fn extract_reasoning_falls_back_to_content() {
        let r = result("plain text");
        assert_eq!(
            extract_reasoning(&r),
            ("plain text".to_string(), "plain text".to_string())
        );
    }

    #[test]
    fn unclosed_think_block_falls_back() {
        let r = result("<think>never closed");
        let (trace, final_text) = extract_reasoning(&r);
        assert_eq!(trace, final_text);
    }
}
