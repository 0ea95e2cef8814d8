//! Pure, deterministic metric computation: answer normalization, EM,
//! token-F1, substring match, length stratification, degeneration counts,
//! the accuracy-efficiency score (AES), stagnation scores, and report
//! aggregation.
//!
//! AES against a baseline, with relative changes
//! dLen = (base_len - method_len) / base_len and
//! dAcc = (method_acc - base_acc) / base_acc:
//!
//!   AES = alpha * dLen + beta * |dAcc|   if dAcc >= 0
//!   AES = alpha * dLen - gamma * |dAcc|  if dAcc <  0
//!
//! with alpha = 1, beta = 3, gamma = 5 by default, so accuracy loss is
//! penalized harder than length savings are rewarded.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::QAExample;
use crate::judge::{JudgeKind, TruncationMode, TruncationResult, VerdictRecord};
use crate::text::normalize_text;
use crate::trace::TraceRecord;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("baseline mean length must be positive (got {0})")]
    NonPositiveBaselineLength(f64),
    #[error("baseline accuracy must be positive (got {0})")]
    NonPositiveBaselineAccuracy(f64),
    #[error("no correctness entry for example id {0}")]
    MissingCorrectness(String),
    #[error("no {kind} verdict for example id {id}")]
    MissingVerdict { kind: &'static str, id: String },
    #[error("record references unknown example id {0}")]
    UnknownExample(String),
    #[error("AES requested but no baseline report supplied")]
    MissingBaseline,
}

/// Normalize an answer string for scoring: case-fold, map punctuation to
/// spaces, drop the articles "a", "an", "the" as whole tokens, collapse
/// whitespace.
pub fn normalize_answer(s: &str) -> String {
    let folded = normalize_text(s);
    let kept: Vec<&str> = folded
        .split_whitespace()
        .filter(|tok| !matches!(*tok, "a" | "an" | "the"))
        .collect();
    kept.join(" ")
}

/// 1 iff the normalized prediction equals the normalized gold answer.
pub fn exact_match(pred: &str, gold: &str) -> bool {
    normalize_answer(pred) == normalize_answer(gold)
}

/// Token-level F1 over normalized whitespace tokens with multiset overlap.
/// Both sides empty after normalization means an exact match and scores 1;
/// one empty side scores 0.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let pred_tokens: Vec<String> = normalize_answer(pred)
        .split_whitespace()
        .map(str::to_string)
        .collect();
    let gold_tokens: Vec<String> = normalize_answer(gold)
        .split_whitespace()
        .map(str::to_string)
        .collect();
    if pred_tokens.is_empty() && gold_tokens.is_empty() {
        return 1.0;
    }
    if pred_tokens.is_empty() || gold_tokens.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for tok in &gold_tokens {
        *counts.entry(tok.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for tok in &pred_tokens {
        if let Some(c) = counts.get_mut(tok.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    f1_from_overlap(overlap, pred_tokens.len(), gold_tokens.len())
}

/// F1 from a multiset overlap and the two token counts.
pub fn f1_from_overlap(overlap: usize, pred_len: usize, gold_len: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred_len as f64;
    let recall = overlap as f64 / gold_len as f64;
    2.0 * precision * recall / (precision + recall)
}

/// True iff the normalized gold answer appears contiguously in the
/// case-folded, punctuation-stripped, whitespace-normalized trace. The trace
/// keeps its articles; only the gold side gets full answer normalization.
pub fn substring_match(trace_text: &str, gold: &str) -> bool {
    normalize_text(trace_text).contains(&normalize_answer(gold))
}

/// AES weights; defaults follow the alpha=1, beta=3, gamma=5 convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AesWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for AesWeights {
    fn default() -> Self {
        AesWeights {
            alpha: 1.0,
            beta: 3.0,
            gamma: 5.0,
        }
    }
}

/// A (mean length, accuracy) operating point entering the AES comparison.
/// Accuracy is a percentage; the relative change is unit-invariant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AesPoint {
    pub mean_len: f64,
    pub acc: f64,
}

/// Accuracy-efficiency score of `method` against `base`.
pub fn aes(base: AesPoint, method: AesPoint, w: AesWeights) -> Result<f64, MetricError> {
    if base.mean_len <= 0.0 {
        return Err(MetricError::NonPositiveBaselineLength(base.mean_len));
    }
    if base.acc <= 0.0 {
        return Err(MetricError::NonPositiveBaselineAccuracy(base.acc));
    }
    let d_length = (base.mean_len - method.mean_len) / base.mean_len;
    let d_acc = (method.acc - base.acc) / base.acc;
    if d_acc >= 0.0 {
        Ok(w.alpha * d_length + w.beta * d_acc.abs())
    } else {
        Ok(w.alpha * d_length - w.gamma * d_acc.abs())
    }
}

/// Mean stagnation score over truncation verdicts of one mode. An empty list
/// yields no value (absent, not 0).
pub fn xi_score(truncations: &[TruncationResult]) -> Option<f64> {
    if truncations.is_empty() {
        return None;
    }
    debug_assert!(
        truncations.windows(2).all(|w| w[0].mode == w[1].mode),
        "xi_score called with mixed truncation modes"
    );
    Some(truncations.iter().map(|t| t.score).sum::<f64>() / truncations.len() as f64)
}

/// Mean lengths stratified by correctness and degeneration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub overall: Option<f64>,
    pub correct: Option<f64>,
    pub incorrect: Option<f64>,
    /// Mean over non-degenerated records only.
    pub valid: Option<f64>,
    pub overall_count: usize,
    pub correct_count: usize,
    pub incorrect_count: usize,
    pub valid_count: usize,
}

/// Output length of one record: reported completion tokens when the endpoint
/// provided them, otherwise an estimate of one token per four normalized
/// trace chars.
pub fn record_len(record: &TraceRecord) -> f64 {
    match record.reported_tokens {
        Some(tokens) => tokens as f64,
        None => record.char_count.div_ceil(4) as f64,
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Stratified mean lengths; every record must have a correctness entry.
pub fn length_stats(
    records: &[TraceRecord],
    correctness: &HashMap<String, bool>,
) -> Result<LengthStats, MetricError> {
    let mut overall = Vec::new();
    let mut correct = Vec::new();
    let mut incorrect = Vec::new();
    let mut valid = Vec::new();
    for record in records {
        let is_correct = *correctness
            .get(&record.example_id)
            .ok_or_else(|| MetricError::MissingCorrectness(record.example_id.clone()))?;
        let len = record_len(record);
        overall.push(len);
        if is_correct {
            correct.push(len);
        } else {
            incorrect.push(len);
        }
        if !record.degenerated {
            valid.push(len);
        }
    }
    Ok(LengthStats {
        overall: mean(&overall),
        correct: mean(&correct),
        incorrect: mean(&incorrect),
        valid: mean(&valid),
        overall_count: overall.len(),
        correct_count: correct.len(),
        incorrect_count: incorrect.len(),
        valid_count: valid.len(),
    })
}

/// Which signal decides "correct" for stratified metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorrectnessSource {
    /// The LLM correctness judge (default).
    #[default]
    LlmJudge,
    /// Exact match against the gold answer.
    ExactMatch,
}

/// AES per accuracy metric, present when a baseline was supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AesByMetric {
    pub em: f64,
    pub f1: f64,
    pub llm: Option<f64>,
}

/// Aggregated metrics for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub run_id: String,
    pub record_count: usize,
    /// Percentages in [0, 100].
    pub em: f64,
    pub f1: f64,
    pub llm_acc: Option<f64>,
    pub substring_correct: Option<f64>,
    pub substring_incorrect: Option<f64>,
    pub inclusion_correct: Option<f64>,
    pub inclusion_incorrect: Option<f64>,
    /// Inclusion verdicts excluded due to judge-parse failures.
    pub inclusion_excluded: usize,
    pub degen_count: usize,
    pub lengths: LengthStats,
    pub xi_ot: Option<f64>,
    pub xi_ut: Option<f64>,
    pub meta_avg: Option<f64>,
    pub correctness_source: CorrectnessSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aes_by_metric: Option<AesByMetric>,
}

/// Options for [`aggregate`].
#[derive(Debug, Clone, Default)]
pub struct AggregateOptions {
    pub run_id: String,
    pub correctness: CorrectnessSource,
    pub weights: Option<AesWeights>,
}

fn percent(numer: usize, denom: usize) -> Option<f64> {
    if denom == 0 {
        None
    } else {
        Some(100.0 * numer as f64 / denom as f64)
    }
}

/// Aggregate a run's records and judge verdicts into a [`MetricReport`].
///
/// When `baseline` is supplied, AES is computed per accuracy metric against
/// it (the baseline's own report shows AES 0 by construction).
pub fn aggregate(
    examples: &[QAExample],
    records: &[TraceRecord],
    verdicts: &[VerdictRecord],
    options: &AggregateOptions,
    baseline: Option<&MetricReport>,
) -> Result<MetricReport, MetricError> {
    let by_id: BTreeMap<&str, &QAExample> = examples.iter().map(|e| (e.id.as_str(), e)).collect();
    let verdict_of = |id: &str, kind: JudgeKind| -> Option<&VerdictRecord> {
        verdicts
            .iter()
            .find(|v| v.example_id == id && v.kind == kind)
    };

    let mut em_hits = 0usize;
    let mut f1_sum = 0.0f64;
    let mut degen_count = 0usize;
    let mut llm_hits = 0usize;
    let mut llm_total = 0usize;
    let mut correctness: HashMap<String, bool> = HashMap::new();

    for record in records {
        let example = by_id
            .get(record.example_id.as_str())
            .ok_or_else(|| MetricError::UnknownExample(record.example_id.clone()))?;
        let pred = record.prediction.answer_text.as_str();
        let em = exact_match(pred, &example.gold_answer);
        em_hits += em as usize;
        f1_sum += token_f1(pred, &example.gold_answer);
        degen_count += record.degenerated as usize;

        let llm_correct =
            verdict_of(&record.example_id, JudgeKind::Correctness).and_then(|v| v.correct);
        if let Some(c) = llm_correct {
            llm_total += 1;
            llm_hits += c as usize;
        }

        let is_correct = match options.correctness {
            CorrectnessSource::ExactMatch => em,
            CorrectnessSource::LlmJudge => llm_correct.ok_or(MetricError::MissingVerdict {
                kind: "correctness",
                id: record.example_id.clone(),
            })?,
        };
        correctness.insert(record.example_id.clone(), is_correct);
    }

    // Substring and inclusion rates stratified over correct vs. incorrect.
    let mut sub_hits = [0usize; 2]; // [incorrect, correct]
    let mut sub_totals = [0usize; 2];
    let mut incl_hits = [0usize; 2];
    let mut incl_totals = [0usize; 2];
    let mut inclusion_excluded = 0usize;
    let mut has_inclusion = false;
    for record in records {
        let example = by_id[record.example_id.as_str()];
        let stratum = correctness[&record.example_id] as usize;
        sub_totals[stratum] += 1;
        sub_hits[stratum] += substring_match(&record.trace_text, &example.gold_answer) as usize;

        if let Some(v) = verdict_of(&record.example_id, JudgeKind::Inclusion) {
            has_inclusion = true;
            match v.inclusive {
                Some(inclusive) => {
                    incl_totals[stratum] += 1;
                    incl_hits[stratum] += inclusive as usize;
                }
                None => inclusion_excluded += 1,
            }
        }
    }

    // Stagnation scores: overthinking over correct samples, underthinking
    // over incorrect samples.
    let mut ot = Vec::new();
    let mut ut = Vec::new();
    let mut meta_scores = Vec::new();
    for record in records {
        if let Some(v) = verdict_of(&record.example_id, JudgeKind::Overthinking) {
            if let Some(t) = &v.truncation {
                debug_assert_eq!(t.mode, TruncationMode::Overthinking);
                ot.push(t.clone());
            }
        }
        if let Some(v) = verdict_of(&record.example_id, JudgeKind::Underthinking) {
            if let Some(t) = &v.truncation {
                ut.push(t.clone());
            }
        }
        if let Some(v) = verdict_of(&record.example_id, JudgeKind::Metacognition) {
            if let Some(score) = v.meta_score {
                meta_scores.push(score as f64);
            }
        }
    }

    let lengths = length_stats(records, &correctness)?;
    let em_pct = percent(em_hits, records.len()).unwrap_or(0.0);
    let f1_pct = if records.is_empty() {
        0.0
    } else {
        100.0 * f1_sum / records.len() as f64
    };
    let llm_acc = percent(llm_hits, llm_total);

    let weights = options.weights.unwrap_or_default();
    let aes_by_metric = match baseline {
        Some(base) => {
            let base_len = base.lengths.overall.ok_or(MetricError::MissingBaseline)?;
            let this_len = lengths.overall.ok_or(MetricError::MissingBaseline)?;
            let against = |base_acc: f64, acc: f64| {
                aes(
                    AesPoint {
                        mean_len: base_len,
                        acc: base_acc,
                    },
                    AesPoint {
                        mean_len: this_len,
                        acc,
                    },
                    weights,
                )
            };
            Some(AesByMetric {
                em: against(base.em, em_pct)?,
                f1: against(base.f1, f1_pct)?,
                llm: match (base.llm_acc, llm_acc) {
                    (Some(b), Some(m)) => Some(against(b, m)?),
                    _ => None,
                },
            })
        }
        None => None,
    };

    Ok(MetricReport {
        run_id: options.run_id.clone(),
        record_count: records.len(),
        em: em_pct,
        f1: f1_pct,
        llm_acc,
        substring_correct: percent(sub_hits[1], sub_totals[1]),
        substring_incorrect: percent(sub_hits[0], sub_totals[0]),
        inclusion_correct: if has_inclusion {
            percent(incl_hits[1], incl_totals[1])
        } else {
            None
        },
        inclusion_incorrect: if has_inclusion {
            percent(incl_hits[0], incl_totals[0])
        } else {
            None
        },
        inclusion_excluded,
        degen_count,
        lengths,
        xi_ot: xi_score(&ot),
        xi_ut: xi_score(&ut),
        meta_avg: mean(&meta_scores),
        correctness_source: options.correctness,
        aes_by_metric,
    })
}
