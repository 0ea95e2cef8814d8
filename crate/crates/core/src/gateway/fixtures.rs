//! Deterministic fixture-backed transport for tests and offline replay.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{
    request_digest, CompletionRequest, CompletionResult, GatewayError, Transport, TransportOutcome,
};

/// Canned completions keyed by request digest.
#[derive(Debug, Default, Clone)]
pub struct FixtureStore {
    entries: BTreeMap<String, CompletionResult>,
}

impl FixtureStore {
    pub fn new() -> Self {
        FixtureStore::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Register a canned result under the request's digest.
    pub fn insert(&mut self, request: &CompletionRequest, result: CompletionResult) {
        self.entries.insert(request_digest(request), result);
    }

    pub fn insert_digest(&mut self, digest: impl Into<String>, result: CompletionResult) {
        self.entries.insert(digest.into(), result);
    }

    pub fn get(&self, digest: &str) -> Option<&CompletionResult> {
        self.entries.get(digest)
    }

    /// Known digests ranked by shared hex prefix with `digest` (longest
    /// first); used to make missing-fixture errors actionable.
    pub fn nearest(&self, digest: &str, limit: usize) -> Vec<String> {
        let mut scored: Vec<(usize, &String)> = self
            .entries
            .keys()
            .map(|known| {
                let common = known
                    .bytes()
                    .zip(digest.bytes())
                    .take_while(|(a, b)| a == b)
                    .count();
                (common, known)
            })
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        scored
            .into_iter()
            .take(limit)
            .map(|(_, k)| k.clone())
            .collect()
    }

    /// Load every `<digest>.json` file from a directory.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let dir = dir.as_ref();
        let mut store = FixtureStore::new();
        let read_err = |source| GatewayError::Cache {
            path: dir.display().to_string(),
            source,
        };
        for entry in fs::read_dir(dir).map_err(read_err)? {
            let entry = entry.map_err(read_err)?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let digest = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let bytes = fs::read(&path).map_err(|source| GatewayError::Cache {
                path: path.display().to_string(),
                source,
            })?;
            let result =
                serde_json::from_slice(&bytes).map_err(|source| GatewayError::CacheFormat {
                    path: path.display().to_string(),
                    source,
                })?;
            store.entries.insert(digest, result);
        }
        Ok(store)
    }

    /// Write every entry as `<digest>.json` under `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<(), GatewayError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| GatewayError::Cache {
            path: dir.display().to_string(),
            source,
        })?;
        for (digest, result) in &self.entries {
            let path = dir.join(format!("{digest}.json"));
            let bytes = serde_json::to_vec(result).expect("completion result serializes");
            fs::write(&path, bytes).map_err(|source| GatewayError::Cache {
                path: path.display().to_string(),
                source,
            })?;
        }
        Ok(())
    }
}

/// Deterministic lookup of a canned result. Never touches the network; an
/// unknown digest is an explicit error so tests cannot silently pass.
pub fn replay(
    request: &CompletionRequest,
    fixtures: &FixtureStore,
) -> Result<CompletionResult, GatewayError> {
    let digest = request_digest(request);
    match fixtures.get(&digest) {
        Some(result) => Ok(result.clone()),
        None => Err(GatewayError::MissingFixture {
            nearest: fixtures.nearest(&digest, 3),
            digest,
        }),
    }
}

/// Transport that serves only from a [`FixtureStore`].
pub struct FixtureTransport {
    store: FixtureStore,
}

impl FixtureTransport {
    pub fn new(store: FixtureStore) -> Self {
        FixtureTransport { store }
    }
}

impl Transport for FixtureTransport {
    fn send(&self, request: &CompletionRequest) -> TransportOutcome {
        match replay(request, &self.store) {
            Ok(result) => TransportOutcome::Success(result),
            Err(err) => TransportOutcome::Fatal {
                status: 0,
                message: err.to_string(),
            },
        }
    }
}
