//! Run configuration: one TOML document with endpoint, models, sampling,
//! concurrency, and limits. A run's manifest embeds the raw document
//! verbatim for provenance.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    EndpointConfig, FixtureStore, FixtureTransport, Gateway, HttpTransport, ResponseCache,
    RetryPolicy, SamplingParams,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed reading config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: String,
        source: toml::de::Error,
    },
    #[error("transport `fixtures` requires fixtures_dir")]
    MissingFixturesDir,
    #[error("unknown transport kind: {0}")]
    UnknownTransport(String),
    #[error(transparent)]
    Gateway(#[from] crate::gateway::GatewayError),
}

/// Model names per role.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelsConfig {
    pub student: String,
    pub teacher: String,
    pub judge: String,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            student: "qwen3-4b".into(),
            teacher: "gpt-oss-120b".into(),
            judge: "gpt-oss-120b".into(),
        }
    }
}

/// Batch limits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitsConfig {
    /// Generations at or beyond this completion-token count degenerated.
    pub token_limit: u64,
    /// Maximum in-flight requests / worker threads.
    pub concurrency: usize,
}

impl Default for LimitsConfig {
    fn default() -> Self {
        LimitsConfig {
            token_limit: 32_768,
            concurrency: 8,
        }
    }
}

/// The whole run config document.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// "http" (default) or "fixtures".
    pub transport: TransportKind,
    /// Fixture directory for the fixtures transport.
    pub fixtures_dir: Option<String>,
    /// Response cache directory; no caching when unset.
    pub cache_dir: Option<String>,
    pub endpoint: EndpointConfig,
    pub models: ModelsConfig,
    pub sampling: SamplingParams,
    pub judge_sampling: JudgeSamplingConfig,
    pub limits: LimitsConfig,
    pub retry: RetryPolicy,
}

/// Judge calls default to greedy sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeSamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for JudgeSamplingConfig {
    fn default() -> Self {
        JudgeSamplingConfig {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 32_768,
        }
    }
}

impl JudgeSamplingConfig {
    pub fn as_sampling(&self) -> SamplingParams {
        SamplingParams {
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    #[default]
    Http,
    Fixtures,
}

/// A parsed config plus the verbatim document it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub raw: String,
}

impl LoadedConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config = toml::from_str(&raw).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        Ok(LoadedConfig { config, raw })
    }

    pub fn defaults() -> Self {
        LoadedConfig {
            config: RunConfig::default(),
            raw: String::new(),
        }
    }

    /// Build the gateway this config describes: transport, retry policy,
    /// concurrency bound, and response cache.
    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        let c = &self.config;
        let transport: Box<dyn crate::gateway::Transport> = match c.transport {
            TransportKind::Http => Box::new(HttpTransport::new(c.endpoint.clone())?),
            TransportKind::Fixtures => {
                let dir = c
                    .fixtures_dir
                    .as_ref()
                    .ok_or(ConfigError::MissingFixturesDir)?;
                Box::new(FixtureTransport::new(FixtureStore::load_dir(dir)?))
            }
        };
        let mut gateway = Gateway::new(transport)
            .with_policy(c.retry.clone())
            .with_concurrency(c.limits.concurrency);
        if let Some(dir) = &c.cache_dir {
            gateway = gateway.with_cache(ResponseCache::open(dir)?);
        }
        Ok(gateway)
    }
}
