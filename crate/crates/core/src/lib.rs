//! Toolkit for building metacognitively structured SFT datasets from
//! multi-hop QA corpora and evaluating reasoning traces.
//!
//! The crate is organized around the batch pipeline:
//!
//! 1. [`ingest`] loads HotpotQA / MuSiQue / 2WikiMultiHopQA files into a
//!    unified schema and renders document context blocks.
//! 2. [`prompts`] renders the stored prompt templates into chat messages.
//! 3. [`gateway`] talks to any OpenAI-compatible endpoint with retries,
//!    bounded concurrency, and a content-addressed response cache (or to a
//!    fixture store for deterministic offline runs).
//! 4. [`trace`] generates student reasoning traces and extracts answers.
//! 5. [`judge`] runs the LLM-judge protocols (answer inclusion, truncation,
//!    metacognition scoring, correctness).
//! 6. [`metrics`] computes EM / token-F1 / substring match, length
//!    stratification, degeneration counts, AES, and stagnation scores.
//! 7. [`sft`] constructs synthesis / rewriting / rejection-sampling SFT
//!    datasets and exports training-ready files.
//! 8. [`grpo`] is a desk-scale reference implementation of the GRPO
//!    reward / advantage / objective math.
//! 9. [`report`] turns metric reports into aligned-text and delimited tables.

pub mod config;
pub mod gateway;
pub mod grpo;
pub mod ingest;
pub mod judge;
pub mod metrics;
pub mod prompts;
pub mod report;
pub mod sft;
pub mod store;
pub mod text;
pub mod trace;

pub(crate) mod par;

/// Ordered, bounded-parallel map: apply `f` to every item from up to
/// `workers` threads and return results in input order. The first failing
/// item's error (by input index) is returned.
pub fn par_map<T, U, E, F>(items: &[T], workers: usize, f: F) -> Result<Vec<U>, E>
where
    T: Sync,
    U: Send,
    E: Send,
    F: Fn(&T) -> Result<U, E> + Sync,
{
    par::parallel_map_ordered(items, workers, |_, item| f(item))
}
