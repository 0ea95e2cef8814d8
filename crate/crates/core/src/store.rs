//! Line-delimited record stores and the per-run directory layout.
//!
//! A run directory holds:
//!
//! ```text
//! <run>/manifest.json    run provenance (config snapshot, counts)
//! <run>/traces.jsonl     one TraceRecord per line
//! <run>/verdicts.jsonl   one VerdictRecord per line
//! <run>/report.json      MetricReport, written by the metrics step
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {source}")]
    Malformed {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("ordered writer received duplicate sequence {0}")]
    DuplicateSequence(usize),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write records as one JSON object per line, replacing the file.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<(), StoreError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for item in items {
        let line = serde_json::to_string(item).expect("record serializes");
        out.write_all(line.as_bytes()).map_err(io_err(path))?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))?;
    Ok(())
}

/// Read one JSON object per line; empty lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, StoreError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|source| StoreError::Malformed {
            path: path.display().to_string(),
            line: index + 1,
            source,
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Accepts records from many workers tagged with their input sequence number
/// and writes them to a JSONL file in sequence order. Each record is written
/// exactly once, as soon as all earlier sequences have arrived.
pub struct OrderedJsonlWriter {
    path: PathBuf,
    state: Mutex<OrderedState>,
}

struct OrderedState {
    next: usize,
    pending: std::collections::BTreeMap<usize, String>,
    out: BufWriter<File>,
}

impl OrderedJsonlWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(&path))?;
        }
        let out = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        Ok(OrderedJsonlWriter {
            path,
            state: Mutex::new(OrderedState {
                next: 0,
                pending: std::collections::BTreeMap::new(),
                out,
            }),
        })
    }

    /// Queue record `seq`; flushes the contiguous prefix.
    pub fn submit<T: Serialize>(&self, seq: usize, record: &T) -> Result<(), StoreError> {
        let line = serde_json::to_string(record).expect("record serializes");
        let mut state = self.state.lock().unwrap();
        if seq < state.next || state.pending.contains_key(&seq) {
            return Err(StoreError::DuplicateSequence(seq));
        }
        state.pending.insert(seq, line);
        loop {
            let next = state.next;
            let Some(line) = state.pending.remove(&next) else {
                break;
            };
            state
                .out
                .write_all(line.as_bytes())
                .map_err(io_err(&self.path))?;
            state.out.write_all(b"\n").map_err(io_err(&self.path))?;
            state.next += 1;
        }
        state.out.flush().map_err(io_err(&self.path))?;
        Ok(())
    }

    /// Number of records written so far (contiguous prefix).
    pub fn written(&self) -> usize {
        self.state.lock().unwrap().next
    }
}

/// Provenance for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub model: String,
    pub mode: String,
    pub dataset: String,
    /// Verbatim snapshot of the run config document.
    pub config_snapshot: String,
    pub record_count: usize,
    pub created_at: chrono::DateTime<chrono::Utc>,
}

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RunPaths { dir: dir.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }

    pub fn traces(&self) -> PathBuf {
        self.dir.join("traces.jsonl")
    }

    pub fn verdicts(&self) -> PathBuf {
        self.dir.join("verdicts.jsonl")
    }

    pub fn report(&self) -> PathBuf {
        self.dir.join("report.json")
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<(), StoreError> {
        let path = self.manifest();
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let bytes = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
        fs::write(&path, bytes).map_err(io_err(&path))?;
        Ok(())
    }

    pub fn read_manifest(&self) -> Result<RunManifest, StoreError> {
        let path = self.manifest();
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        serde_json::from_slice(&bytes).map_err(|source| StoreError::Malformed {
            path: path.display().to_string(),
            line: 0,
            source,
        })
    }
}
