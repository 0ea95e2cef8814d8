//! LLM-as-a-judge protocols: answer inclusion, overthinking/underthinking
//! truncation, metacognition scoring, and the correctness judge backing the
//! LLM accuracy column.
//!
//! All parses are strict and total: a reply yields a verdict or, after one
//! automatic re-ask, a flagged exclusion — never a silent default. Judges run
//! greedily (temperature 0) and route through the gateway cache, so
//! re-judging an unchanged corpus issues no network calls.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{CompletionRequest, Gateway, GatewayError, SamplingParams};
use crate::ingest::QAExample;
use crate::metrics::exact_match;
use crate::par::parallel_map_ordered;
use crate::prompts::{Bindings, PromptError, TemplateId, TemplateStore};
use crate::text::{normalize_whitespace, normalized_char_count};
use crate::trace::TraceRecord;

/// Answer-inclusion verdict: did the trace derive the gold answer with
/// support at any point?
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionVerdict {
    pub inclusive: bool,
    pub raw_reply: String,
}

/// Which stagnation protocol a truncation verdict belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    Overthinking,
    Underthinking,
}

/// Judge-truncation outcome. `total_chars` is the whitespace-normalized
/// length of the full trace (T), `effective_chars` the recovered cut-off
/// point (T-hat), and `score = 1 - effective/total`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationResult {
    pub mode: TruncationMode,
    pub total_chars: usize,
    pub effective_chars: usize,
    pub prefix_exact: bool,
    pub score: f64,
}

/// Metacognition rubric score in [0, 5].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetacognitionVerdict {
    pub score: u8,
    pub raw_reply: String,
}

/// Correctness-judge outcome; `flagged` marks the exact-match fallback after
/// an unparseable reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrectnessVerdict {
    pub correct: bool,
    pub flagged: bool,
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge reply unparseable after re-ask: {raw:?}")]
    Unparseable { raw: String },
    #[error("judge reply empty after re-ask")]
    EmptyReply,
    #[error("trace text is empty for example {0}")]
    EmptyTrace(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Parse a strict YES/NO reply: trim surrounding whitespace and punctuation,
/// case-fold, and accept only the bare word.
pub fn parse_yes_no(reply: &str) -> Option<bool> {
    let token = reply
        .trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
        .to_lowercase();
    match token.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// Parse the first standalone integer in the reply, accepting only the
/// rubric range 0-5.
pub fn parse_meta_score(reply: &str) -> Option<u8> {
    let mut digits = String::new();
    for ch in reply.chars() {
        if ch.is_ascii_digit() {
            digits.push(ch);
        } else if !digits.is_empty() {
            break;
        }
    }
    if digits.is_empty() {
        return None;
    }
    match digits.parse::<u32>() {
        Ok(v) if v <= 5 => Some(v as u8),
        _ => None,
    }
}

/// Recover the effective cut-off point of `returned` against `full`.
///
/// Both strings are whitespace-normalized first. If the normalized reply is a
/// prefix of the normalized trace, the effective length is its char count and
/// the match is exact; otherwise the longest common normalized prefix is used
/// and the result is marked inexact.
pub fn match_prefix(full: &str, returned: &str) -> (usize, bool) {
    let full_norm = normalize_whitespace(full);
    let returned_norm = normalize_whitespace(returned);
    let full_chars: Vec<char> = full_norm.chars().collect();
    let returned_chars: Vec<char> = returned_norm.chars().collect();
    if returned_chars.len() <= full_chars.len()
        && full_chars[..returned_chars.len()] == returned_chars[..]
    {
        return (returned_chars.len(), true);
    }
    let common = full_chars
        .iter()
        .zip(returned_chars.iter())
        .take_while(|(a, b)| a == b)
        .count();
    (common, false)
}

/// Runs the judge protocols over a gateway.
pub struct JudgeSuite<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateStore,
    pub model: String,
    pub sampling: SamplingParams,
}

impl<'a> JudgeSuite<'a> {
    pub fn new(
        gateway: &'a Gateway,
        templates: &'a TemplateStore,
        model: impl Into<String>,
    ) -> Self {
        JudgeSuite {
            gateway,
            templates,
            model: model.into(),
            sampling: SamplingParams::greedy(),
        }
    }

    fn request(
        &self,
        template: TemplateId,
        bindings: &Bindings,
        seed_tag: &str,
    ) -> Result<CompletionRequest, JudgeError> {
        let messages = self.templates.render(template, bindings)?;
        Ok(CompletionRequest::new(
            self.model.clone(),
            messages,
            self.sampling,
            seed_tag,
        ))
    }

    /// The request issued for an inclusion judgment (exposed for fixture
    /// authoring; seed tags are `judge-0` and `judge-reask-1`).
    pub fn inclusion_request(
        &self,
        example: &QAExample,
        trace_text: &str,
        seed_tag: &str,
    ) -> Result<CompletionRequest, JudgeError> {
        self.request(
            TemplateId::AnswerInclusion,
            &Bindings::new()
                .set("question", example.question.as_str())
                .set("answer", example.gold_answer.as_str())
                .set("reasoning_trace", trace_text),
            seed_tag,
        )
    }

    pub fn truncation_request(
        &self,
        mode: TruncationMode,
        trace_text: &str,
        seed_tag: &str,
    ) -> Result<CompletionRequest, JudgeError> {
        let template = match mode {
            TruncationMode::Overthinking => TemplateId::Overthinking,
            TruncationMode::Underthinking => TemplateId::Underthinking,
        };
        self.request(
            template,
            &Bindings::new().set("reasoning_trace", trace_text),
            seed_tag,
        )
    }

    pub fn metacognition_request(
        &self,
        trace_text: &str,
        seed_tag: &str,
    ) -> Result<CompletionRequest, JudgeError> {
        self.request(
            TemplateId::Metacognition,
            &Bindings::new().set("reasoning_trace", trace_text),
            seed_tag,
        )
    }

    pub fn correctness_request(
        &self,
        example: &QAExample,
        prediction: &str,
        seed_tag: &str,
    ) -> Result<CompletionRequest, JudgeError> {
        self.request(
            TemplateId::CorrectnessJudge,
            &Bindings::new()
                .set("question", example.question.as_str())
                .set("answer", example.gold_answer.as_str())
                .set("prediction", prediction),
            seed_tag,
        )
    }

    /// Ask, parse, and on failure re-ask once with a fresh seed tag. Returns
    /// the parsed value, the raw reply, and whether a re-ask happened.
    fn ask<T>(
        &self,
        build: impl Fn(&str) -> Result<CompletionRequest, JudgeError>,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<(T, String, bool), JudgeError> {
        let first = self.gateway.complete(&build("judge-0")?)?;
        if let Some(value) = parse(&first.content) {
            return Ok((value, first.content, false));
        }
        let second = self.gateway.complete(&build("judge-reask-1")?)?;
        match parse(&second.content) {
            Some(value) => Ok((value, second.content, true)),
            None => Err(JudgeError::Unparseable {
                raw: second.content,
            }),
        }
    }

    /// Answer-inclusion protocol (strict YES/NO).
    pub fn judge_answer_inclusion(
        &self,
        example: &QAExample,
        trace_text: &str,
    ) -> Result<InclusionVerdict, JudgeError> {
        if trace_text.trim().is_empty() {
            return Err(JudgeError::EmptyTrace(example.id.clone()));
        }
        let (inclusive, raw_reply, _) = self.ask(
            |seed| self.inclusion_request(example, trace_text, seed),
            parse_yes_no,
        )?;
        Ok(InclusionVerdict {
            inclusive,
            raw_reply,
        })
    }

    /// Truncation protocol. The judge returns a leading segment of the trace;
    /// the cut-off is recovered with [`match_prefix`] and scored as
    /// `1 - effective/total`. Overthinking is meant for correct samples and
    /// underthinking for incorrect ones; the caller enforces that split.
    pub fn judge_truncation(
        &self,
        example: &QAExample,
        trace_text: &str,
        mode: TruncationMode,
    ) -> Result<TruncationResult, JudgeError> {
        if trace_text.trim().is_empty() {
            return Err(JudgeError::EmptyTrace(example.id.clone()));
        }
        let (returned, _, _) = self
            .ask(
                |seed| self.truncation_request(mode, trace_text, seed),
                |reply| {
                    if reply.trim().is_empty() {
                        None
                    } else {
                        Some(reply.to_string())
                    }
                },
            )
            .map_err(|e| match e {
                JudgeError::Unparseable { .. } => JudgeError::EmptyReply,
                other => other,
            })?;
        let total_chars = normalized_char_count(trace_text);
        let (effective_chars, prefix_exact) = match_prefix(trace_text, &returned);
        let effective_chars = effective_chars.min(total_chars);
        let score = 1.0 - effective_chars as f64 / total_chars as f64;
        Ok(TruncationResult {
            mode,
            total_chars,
            effective_chars,
            prefix_exact,
            score,
        })
    }

    /// Metacognition rubric score (first standalone integer, 0-5).
    pub fn judge_metacognition(
        &self,
        example_id: &str,
        trace_text: &str,
    ) -> Result<MetacognitionVerdict, JudgeError> {
        if trace_text.trim().is_empty() {
            return Err(JudgeError::EmptyTrace(example_id.to_string()));
        }
        let (score, raw_reply, _) = self.ask(
            |seed| self.metacognition_request(trace_text, seed),
            parse_meta_score,
        )?;
        Ok(MetacognitionVerdict { score, raw_reply })
    }

    /// Correctness judgment. Empty predictions are false without a call;
    /// exact normalized equality is true without a call; otherwise the judge
    /// decides, with exact match as the flagged fallback when even the
    /// re-ask is unparseable.
    pub fn judge_correctness(
        &self,
        example: &QAExample,
        prediction: &str,
    ) -> Result<CorrectnessVerdict, JudgeError> {
        if prediction.trim().is_empty() {
            return Ok(CorrectnessVerdict {
                correct: false,
                flagged: false,
            });
        }
        if exact_match(prediction, &example.gold_answer) {
            return Ok(CorrectnessVerdict {
                correct: true,
                flagged: false,
            });
        }
        match self.ask(
            |seed| self.correctness_request(example, prediction, seed),
            parse_yes_no,
        ) {
            Ok((correct, _, _)) => Ok(CorrectnessVerdict {
                correct,
                flagged: false,
            }),
            Err(JudgeError::Unparseable { .. }) => Ok(CorrectnessVerdict {
                correct: exact_match(prediction, &example.gold_answer),
                flagged: true,
            }),
            Err(other) => Err(other),
        }
    }
}

/// The judge protocols a batch run can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    Correctness,
    Inclusion,
    Overthinking,
    Underthinking,
    Metacognition,
}

impl std::str::FromStr for JudgeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "correctness" => Ok(JudgeKind::Correctness),
            "inclusion" => Ok(JudgeKind::Inclusion),
            "ot" | "overthinking" => Ok(JudgeKind::Overthinking),
            "ut" | "underthinking" => Ok(JudgeKind::Underthinking),
            "meta" | "metacognition" => Ok(JudgeKind::Metacognition),
            other => Err(format!("unknown judge kind: {other}")),
        }
    }
}

/// One stored verdict, keyed by (example_id, run_id, kind). A `flagged`
/// record had parse trouble; a flagged record whose payload is absent is
/// excluded from statistics (with the exclusion counted), never defaulted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub example_id: String,
    #[serde(default)]
    pub run_id: String,
    pub kind: JudgeKind,
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inclusive: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<TruncationResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta_score: Option<u8>,
}

/// Run the requested judge kinds over a run's records.
///
/// Correctness runs first (it routes the truncation protocols: overthinking
/// on correct samples, underthinking on incorrect ones). Output order is
/// deterministic: kinds in `[correctness, inclusion, ot, ut, meta]` order,
/// records in input order within each kind.
pub fn run_judges(
    suite: &JudgeSuite,
    examples: &[QAExample],
    records: &[TraceRecord],
    kinds: &[JudgeKind],
    workers: usize,
    run_id: &str,
) -> Result<Vec<VerdictRecord>, JudgeError> {
    let example_of = |id: &str| -> Option<&QAExample> { examples.iter().find(|e| e.id == id) };
    let mut verdicts: Vec<VerdictRecord> = Vec::new();
    let verdict = |example_id: &str, kind: JudgeKind, flagged: bool| VerdictRecord {
        example_id: example_id.to_string(),
        run_id: run_id.to_string(),
        kind,
        flagged,
        correct: None,
        inclusive: None,
        truncation: None,
        meta_score: None,
    };

    let want = |kind: JudgeKind| kinds.contains(&kind);
    let need_correctness = want(JudgeKind::Correctness)
        || want(JudgeKind::Overthinking)
        || want(JudgeKind::Underthinking);

    let mut correctness: Vec<Option<bool>> = vec![None; records.len()];
    if need_correctness {
        let outcomes = parallel_map_ordered(records, workers, |_, record| {
            let Some(example) = example_of(&record.example_id) else {
                return Ok(None);
            };
            suite
                .judge_correctness(example, &record.prediction.answer_text)
                .map(Some)
        })?;
        for (i, outcome) in outcomes.iter().enumerate() {
            if let Some(v) = outcome {
                correctness[i] = Some(v.correct);
                if want(JudgeKind::Correctness) {
                    verdicts.push(VerdictRecord {
                        correct: Some(v.correct),
                        ..verdict(&records[i].example_id, JudgeKind::Correctness, v.flagged)
                    });
                }
            }
        }
    }

    if want(JudgeKind::Inclusion) {
        let outcomes = parallel_map_ordered(records, workers, |_, record| {
            let Some(example) = example_of(&record.example_id) else {
                return Ok(None);
            };
            if record.trace_text.trim().is_empty() {
                return Ok(None);
            }
            match suite.judge_answer_inclusion(example, &record.trace_text) {
                Ok(verdict) => Ok(Some((Some(verdict.inclusive), false))),
                Err(JudgeError::Unparseable { .. }) => Ok(Some((None, true))),
                Err(other) => Err(other),
            }
        })?;
        for (i, outcome) in outcomes.into_iter().enumerate() {
            if let Some((inclusive, flagged)) = outcome {
                verdicts.push(VerdictRecord {
                    inclusive,
                    ..verdict(&records[i].example_id, JudgeKind::Inclusion, flagged)
                });
            }
        }
    }

    for (kind, mode, on_correct) in [
        (JudgeKind::Overthinking, TruncationMode::Overthinking, true),
        (
            JudgeKind::Underthinking,
            TruncationMode::Underthinking,
            false,
        ),
    ] {
        if !want(kind) {
            continue;
        }
        let outcomes = parallel_map_ordered(records, workers, |i, record| {
            if correctness[i] != Some(on_correct) || record.trace_text.trim().is_empty() {
                return Ok(None);
            }
            let Some(example) = example_of(&record.example_id) else {
                return Ok(None);
            };
            match suite.judge_truncation(example, &record.trace_text, mode) {
                Ok(result) => Ok(Some((Some(result), false))),
                Err(JudgeError::EmptyReply) => Ok(Some((None, true))),
                Err(other) => Err(other),
            }
        })?;
        for (i, outcome) in outcomes.into_iter().enumerate() {
            if let Some((truncation, empty_reply)) = outcome {
                let flagged = empty_reply || truncation.as_ref().is_some_and(|t| !t.prefix_exact);
                verdicts.push(VerdictRecord {
                    truncation,
                    ..verdict(&records[i].example_id, kind, flagged)
                });
            }
        }
    }

    if want(JudgeKind::Metacognition) {
        let outcomes = parallel_map_ordered(records, workers, |_, record| {
            if record.trace_text.trim().is_empty() {
                return Ok(None);
            }
            match suite.judge_metacognition(&record.example_id, &record.trace_text) {
                Ok(verdict) => Ok(Some((Some(verdict.score), false))),
                Err(JudgeError::Unparseable { .. }) => Ok(Some((None, true))),
                Err(other) => Err(other),
            }
        })?;
        for (i, outcome) in outcomes.into_iter().enumerate() {
            if let Some((meta_score, flagged)) = outcome {
                verdicts.push(VerdictRecord {
                    meta_score,
                    ..verdict(&records[i].example_id, JudgeKind::Metacognition, flagged)
                });
            }
        }
    }

    Ok(verdicts)
}
