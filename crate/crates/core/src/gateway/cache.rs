//! Content-addressed response cache: append-only, one file per digest.
//!
//! Writes follow a write-temp-then-rename discipline so concurrent writers of
//! the same key converge to one valid entry, and crashed runs can resume from
//! whatever finished renaming.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{CompletionRequest, CompletionResult, GatewayError};

/// Stable digest over exactly the fields that parameterize a completion:
/// model, messages, temperature, top_p, max_tokens, seed_tag. Changing any
/// one field changes the digest; changing none preserves it.
pub fn request_digest(request: &CompletionRequest) -> String {
    #[derive(Serialize)]
    struct KeyFields<'a> {
        model: &'a str,
        messages: &'a [super::Message],
        temperature: f64,
        top_p: f64,
        max_tokens: u32,
        seed_tag: &'a str,
    }
    let key = KeyFields {
        model: &request.model,
        messages: &request.messages,
        temperature: request.temperature,
        top_p: request.top_p,
        max_tokens: request.max_tokens,
        seed_tag: &request.seed_tag,
    };
    let bytes = serde_json::to_vec(&key).expect("request fields serialize");
    hex::encode(Sha256::digest(bytes))
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Directory of cached completions, one `<digest>.json` file per entry.
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|source| GatewayError::Cache {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    pub fn get(&self, digest: &str) -> Result<Option<CompletionResult>, GatewayError> {
        let path = self.entry_path(digest);
        let bytes = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => {
                return Err(GatewayError::Cache {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        let result =
            serde_json::from_slice(&bytes).map_err(|source| GatewayError::CacheFormat {
                path: path.display().to_string(),
                source,
            })?;
        Ok(Some(result))
    }

    pub fn put(&self, digest: &str, result: &CompletionResult) -> Result<(), GatewayError> {
        let path = self.entry_path(digest);
        let stored = CompletionResult {
            cached: false,
            ..result.clone()
        };
        let bytes = serde_json::to_vec(&stored).expect("completion result serializes");
        let tmp = self.dir.join(format!(
            ".tmp-{digest}-{}-{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let io_err = |source| GatewayError::Cache {
            path: path.display().to_string(),
            source,
        };
        fs::write(&tmp, bytes).map_err(io_err)?;
        fs::rename(&tmp, &path).map_err(|source| GatewayError::Cache {
            path: path.display().to_string(),
            source,
        })?;
        Ok(())
    }
}
