//! OpenAI-compatible chat-completions HTTP transport.

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, CompletionResult, FinishReason, Transport, TransportOutcome};

/// Name of the environment variable holding the endpoint credential.
pub const API_KEY_ENV: &str = "MBT_API_KEY";

/// Endpoint settings for [`HttpTransport`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// Base URL, e.g. `https://host/v1`. The transport posts to
    /// `{base_url}/chat/completions`.
    pub base_url: String,
    /// Provider-specific reasoning-effort pass-through (e.g. "high").
    /// Not part of the request cache key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_effort: Option<String>,
    /// Request timeout in seconds.
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    600
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://localhost:8000/v1".to_string(),
            reasoning_effort: None,
            timeout_secs: default_timeout_secs(),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [super::Message],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    reasoning_effort: Option<&'a str>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
    /// Some endpoints report the reasoning channel as `reasoning`, others as
    /// `reasoning_content`.
    #[serde(default)]
    reasoning: Option<String>,
    #[serde(default)]
    reasoning_content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    completion_tokens: Option<u64>,
}

/// Blocking HTTP transport for OpenAI-compatible endpoints. Credential comes
/// from the `MBT_API_KEY` environment variable.
pub struct HttpTransport {
    config: EndpointConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(config: EndpointConfig) -> Result<Self, super::GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| super::GatewayError::Transport(e.to_string()))?;
        let api_key = std::env::var(API_KEY_ENV).ok();
        Ok(HttpTransport {
            config,
            client,
            api_key,
        })
    }

    fn url(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }
}

fn parse_finish_reason(raw: Option<&str>) -> FinishReason {
    match raw {
        Some("stop") => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        _ => FinishReason::Other,
    }
}

fn retryable_status(status: u16) -> bool {
    status == 408 || status == 429 || (500..=599).contains(&status)
}

impl Transport for HttpTransport {
    fn send(&self, request: &CompletionRequest) -> TransportOutcome {
        let body = WireRequest {
            model: &request.model,
            messages: &request.messages,
            temperature: request.temperature,
            top_p: request.top_p,
            max_tokens: request.max_tokens,
            reasoning_effort: self.config.reasoning_effort.as_deref(),
        };
        let mut builder = self.client.post(self.url()).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = match builder.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() => {
                return TransportOutcome::Transient(format!("request failed: {e}"));
            }
            Err(e) => {
                return TransportOutcome::Fatal {
                    status: 0,
                    message: e.to_string(),
                }
            }
        };

        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let message = response.text().unwrap_or_default();
            return if retryable_status(status) {
                TransportOutcome::Transient(format!("HTTP {status}: {message}"))
            } else {
                TransportOutcome::Fatal { status, message }
            };
        }

        let parsed: WireResponse = match response.json() {
            Ok(p) => p,
            Err(e) => {
                return TransportOutcome::Fatal {
                    status,
                    message: format!("unparseable response body: {e}"),
                }
            }
        };
        let Some(choice) = parsed.choices.into_iter().next() else {
            return TransportOutcome::Fatal {
                status,
                message: "response had no choices".into(),
            };
        };
        TransportOutcome::Success(CompletionResult {
            content: choice.message.content.unwrap_or_default(),
            reasoning: choice
                .message
                .reasoning
                .or(choice.message.reasoning_content),
            finish_reason: parse_finish_reason(choice.finish_reason.as_deref()),
            reported_completion_tokens: parsed.usage.and_then(|u| u.completion_tokens),
            cached: false,
        })
    }
}
