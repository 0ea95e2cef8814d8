//! SFT dataset construction: teacher synthesis (mbt-s), teacher rewriting of
//! student drafts via a two-turn dialogue (mbt-r), and the rejection-sampling
//! baseline, plus export of training-ready files.
//!
//! Exported assistant targets are assembled in the student's native trace
//! channel: `<think>{trace}</think><answer>{answer}</answer>`, so every
//! record round-trips through `extract_reasoning` + `extract_answer`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    extract_reasoning, CompletionRequest, Gateway, GatewayError, Message, SamplingParams,
};
use crate::ingest::{render_context, QAExample};
use crate::metrics::substring_match;
use crate::prompts::{Bindings, PromptError, TemplateId, TemplateStore};
use crate::trace::TraceRecord;

/// Construction strategy that produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftOrigin {
    MbtS,
    MbtR,
    Rejection,
}

/// One training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub example_id: String,
    pub origin: SftOrigin,
    /// The rendered QA prompt the student will see at train time.
    pub user_prompt: String,
    pub target_trace: String,
    pub target_answer: String,
    pub teacher_model: String,
    /// Only set for mbt-r records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draft_was_correct: Option<bool>,
}

/// Why a construction was dropped rather than emitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// Teacher trace was byte-equal to the gold answer (no reasoning).
    TraceEqualsAnswer,
    /// Optional final-answer verification found no gold mention.
    AnswerNotDerived,
    /// Assistant target would not round-trip (trace or answer carries a
    /// reserved tag marker).
    UnsafeMarkers,
    /// Trace exceeds the export length cap.
    TooLong,
}

/// Outcome of building one record.
#[derive(Debug, Clone, PartialEq)]
pub enum BuildOutcome {
    Record(SftRecord),
    Rejected {
        example_id: String,
        reason: RejectReason,
    },
}

#[derive(Debug, Error)]
pub enum SftError {
    #[error("example {example_id}: teacher reply was empty")]
    EmptyTeacherReply { example_id: String },
    #[error("draft record {draft_id} does not belong to example {example_id}")]
    DraftMismatch {
        draft_id: String,
        example_id: String,
    },
    #[error("example {example_id}: draft trace is empty")]
    EmptyDraft { example_id: String },
    #[error("export called with no records")]
    EmptyExport,
    #[error("export I/O error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("example {example_id}: {source}")]
    Gateway {
        example_id: String,
        source: GatewayError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Builds SFT records through a teacher endpoint.
pub struct SftBuilder<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateStore,
    pub teacher_model: String,
    pub sampling: SamplingParams,
    /// When set, synthesized traces that never mention the gold answer are
    /// rejected instead of emitted. Off by default.
    pub verify_final_answer: bool,
}

impl<'a> SftBuilder<'a> {
    pub fn new(
        gateway: &'a Gateway,
        templates: &'a TemplateStore,
        teacher_model: impl Into<String>,
    ) -> Self {
        SftBuilder {
            gateway,
            templates,
            teacher_model: teacher_model.into(),
            sampling: SamplingParams::default(),
            verify_final_answer: false,
        }
    }

    pub fn with_sampling(mut self, sampling: SamplingParams) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_verify_final_answer(mut self, on: bool) -> Self {
        self.verify_final_answer = on;
        self
    }

    fn synthesis_messages(&self, example: &QAExample) -> Result<Vec<Message>, PromptError> {
        self.templates.render(
            TemplateId::MbtS,
            &Bindings::new()
                .set("context", render_context(example))
                .set("question", example.question.as_str())
                .set("answer", example.gold_answer.as_str()),
        )
    }

    /// The user prompt the student sees at train time (Base QA rendering).
    pub fn student_prompt(&self, example: &QAExample) -> Result<String, PromptError> {
        let messages = self.templates.render(
            TemplateId::BaseQa,
            &Bindings::new()
                .set("context", render_context(example))
                .set("question", example.question.as_str()),
        )?;
        Ok(messages
            .into_iter()
            .next()
            .map(|m| m.content)
            .unwrap_or_default())
    }

    /// Request for the synthesis turn (also the first turn of rewriting).
    pub fn synthesis_request(
        &self,
        example: &QAExample,
        seed_tag: &str,
    ) -> Result<CompletionRequest, SftError> {
        Ok(CompletionRequest::new(
            self.teacher_model.clone(),
            self.synthesis_messages(example)?,
            self.sampling,
            seed_tag,
        ))
    }

    /// Request for the rewrite turn: synthesis prompt, the teacher's own
    /// solution as an assistant message, then the rewrite prompt carrying the
    /// student draft.
    pub fn rewrite_request(
        &self,
        example: &QAExample,
        teacher_solution: &str,
        draft_trace: &str,
        seed_tag: &str,
    ) -> Result<CompletionRequest, SftError> {
        let mut messages = self.synthesis_messages(example)?;
        messages.push(Message::assistant(teacher_solution));
        let rewrite = self.templates.render(
            TemplateId::MbtR,
            &Bindings::new().set("reasoning_trace", draft_trace),
        )?;
        messages.extend(rewrite);
        Ok(CompletionRequest::new(
            self.teacher_model.clone(),
            messages,
            self.sampling,
            seed_tag,
        ))
    }

    fn teacher_reply(
        &self,
        request: &CompletionRequest,
        example_id: &str,
    ) -> Result<String, SftError> {
        let result = self
            .gateway
            .complete(request)
            .map_err(|source| SftError::Gateway {
                example_id: example_id.to_string(),
                source,
            })?;
        let (_, final_text) = extract_reasoning(&result);
        Ok(final_text)
    }

    /// Synthesize a metacognitive trace from scratch, conditioned on the gold
    /// answer. The emitted target answer is the gold answer.
    pub fn build_mbt_s(&self, example: &QAExample) -> Result<BuildOutcome, SftError> {
        let request = self.synthesis_request(example, "teacher-0")?;
        let trace = self.teacher_reply(&request, &example.id)?;
        if trace.trim().is_empty() {
            return Err(SftError::EmptyTeacherReply {
                example_id: example.id.clone(),
            });
        }
        if trace.trim() == example.gold_answer.trim() {
            return Ok(BuildOutcome::Rejected {
                example_id: example.id.clone(),
                reason: RejectReason::TraceEqualsAnswer,
            });
        }
        if self.verify_final_answer && !substring_match(&trace, &example.gold_answer) {
            return Ok(BuildOutcome::Rejected {
                example_id: example.id.clone(),
                reason: RejectReason::AnswerNotDerived,
            });
        }
        Ok(BuildOutcome::Record(SftRecord {
            example_id: example.id.clone(),
            origin: SftOrigin::MbtS,
            user_prompt: self.student_prompt(example)?,
            target_trace: trace,
            target_answer: example.gold_answer.clone(),
            teacher_model: self.teacher_model.clone(),
            draft_was_correct: None,
        }))
    }

    /// Rewrite a student draft through the two-turn protocol: the teacher
    /// first produces its own correct solution, then rewrites the draft
    /// conditioned on that established understanding.
    pub fn build_mbt_r(
        &self,
        example: &QAExample,
        draft: &TraceRecord,
        draft_was_correct: bool,
    ) -> Result<BuildOutcome, SftError> {
        if draft.example_id != example.id {
            return Err(SftError::DraftMismatch {
                draft_id: draft.example_id.clone(),
                example_id: example.id.clone(),
            });
        }
        if draft.trace_text.trim().is_empty() {
            return Err(SftError::EmptyDraft {
                example_id: example.id.clone(),
            });
        }
        let turn1 = self.synthesis_request(example, "teacher-0")?;
        let solution = self.teacher_reply(&turn1, &example.id)?;
        if solution.trim().is_empty() {
            return Err(SftError::EmptyTeacherReply {
                example_id: example.id.clone(),
            });
        }
        let turn2 = self.rewrite_request(example, &solution, &draft.trace_text, "teacher-0")?;
        let rewritten = self.teacher_reply(&turn2, &example.id)?;
        if rewritten.trim().is_empty() {
            return Err(SftError::EmptyTeacherReply {
                example_id: example.id.clone(),
            });
        }
        if rewritten.trim() == example.gold_answer.trim() {
            return Ok(BuildOutcome::Rejected {
                example_id: example.id.clone(),
                reason: RejectReason::TraceEqualsAnswer,
            });
        }
        Ok(BuildOutcome::Record(SftRecord {
            example_id: example.id.clone(),
            origin: SftOrigin::MbtR,
            user_prompt: self.student_prompt(example)?,
            target_trace: rewritten,
            target_answer: example.gold_answer.clone(),
            teacher_model: self.teacher_model.clone(),
            draft_was_correct: Some(draft_was_correct),
        }))
    }
}

/// Rejection-sampling baseline: keep only correct, non-degenerated student
/// records; the target trace is the student's own trace verbatim and the
/// target answer its own extracted prediction.
///
/// Returns the kept records and the number filtered out.
pub fn rejection_filter(
    items: &[(&QAExample, &TraceRecord, bool)],
    student_model: &str,
    templates: &TemplateStore,
) -> Result<(Vec<SftRecord>, usize), SftError> {
    let mut kept = Vec::new();
    let mut dropped = 0usize;
    for (example, record, correct) in items {
        if !correct || record.degenerated || record.prediction.answer_text.trim().is_empty() {
            dropped += 1;
            continue;
        }
        let messages = templates.render(
            TemplateId::BaseQa,
            &Bindings::new()
                .set("context", render_context(example))
                .set("question", example.question.as_str()),
        )?;
        kept.push(SftRecord {
            example_id: example.id.clone(),
            origin: SftOrigin::Rejection,
            user_prompt: messages
                .into_iter()
                .next()
                .map(|m| m.content)
                .unwrap_or_default(),
            target_trace: record.trace_text.clone(),
            target_answer: record.prediction.answer_text.clone(),
            teacher_model: student_model.to_string(),
            draft_was_correct: None,
        });
    }
    Ok((kept, dropped))
}

/// Assemble the assistant turn for a record.
pub fn assistant_content(record: &SftRecord) -> String {
    format!(
        "<think>{}</think><answer>{}</answer>",
        record.target_trace, record.target_answer
    )
}

/// True iff the record's assistant content will parse back to exactly
/// (target_trace, target_answer).
pub fn round_trips(record: &SftRecord) -> bool {
    !record.target_trace.contains("</think>")
        && !record.target_answer.contains("</answer>")
        && !record.target_answer.contains("<answer>")
        && record.target_answer.trim() == record.target_answer
        && !record.target_answer.is_empty()
}

/// One exported line: a two-message chat plus construction metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedRecord {
    pub messages: Vec<Message>,
    pub example_id: String,
    pub origin: SftOrigin,
    pub teacher_model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draft_was_correct: Option<bool>,
}

/// Export summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub count: usize,
    pub bytes: u64,
    /// Records skipped by the length cap or the round-trip guard.
    pub skipped: usize,
}

/// Write records as line-delimited chat examples. `max_trace_chars`, when
/// set, drops records with longer raw traces. Records that cannot round-trip
/// are skipped and counted, never emitted broken.
pub fn export_sft(
    records: &[SftRecord],
    destination: impl AsRef<Path>,
    max_trace_chars: Option<usize>,
) -> Result<ExportSummary, SftError> {
    if records.is_empty() {
        return Err(SftError::EmptyExport);
    }
    let path = destination.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| SftError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    let io_err = |source| SftError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    let mut count = 0usize;
    let mut bytes = 0u64;
    let mut skipped = 0usize;
    for record in records {
        let too_long = max_trace_chars.is_some_and(|cap| record.target_trace.chars().count() > cap);
        if too_long || !round_trips(record) {
            skipped += 1;
            continue;
        }
        let exported = ExportedRecord {
            messages: vec![
                Message::user(record.user_prompt.clone()),
                Message::assistant(assistant_content(record)),
            ],
            example_id: record.example_id.clone(),
            origin: record.origin,
            teacher_model: record.teacher_model.clone(),
            draft_was_correct: record.draft_was_correct,
        };
        let line = serde_json::to_string(&exported).expect("record serializes");
        out.write_all(line.as_bytes())
            .map_err(|source| SftError::Io {
                path: path.display().to_string(),
                source,
            })?;
        out.write_all(b"\n").map_err(|source| SftError::Io {
            path: path.display().to_string(),
            source,
        })?;
        bytes += line.len() as u64 + 1;
        count += 1;
    }
    out.flush().map_err(|source| SftError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(ExportSummary {
        count,
        bytes,
        skipped,
    })
}

/// Reload an exported file.
pub fn read_sft(path: impl AsRef<Path>) -> Result<Vec<ExportedRecord>, SftError> {
    crate::store::read_jsonl(path.as_ref()).map_err(|e| SftError::Io {
        path: path.as_ref().display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
    })
}
