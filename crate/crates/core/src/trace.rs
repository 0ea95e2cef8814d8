//! Student reasoning trace generation: prompt the model in Base or
//! Metacognitive-Prompting mode, split the reply into trace and final text,
//! extract the tagged answer, and detect degeneration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    extract_reasoning, CompletionRequest, CompletionResult, FinishReason, Gateway, GatewayError,
    SamplingParams,
};
use crate::ingest::{render_context, QAExample};
use crate::par::parallel_map_ordered;
use crate::prompts::{Bindings, PromptError, TemplateId, TemplateStore};
use crate::store::{OrderedJsonlWriter, StoreError};
use crate::text::normalized_char_count;

/// How the answer was recovered from the final text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionStatus {
    Tagged,
    MissingTags,
    Degenerated,
}

/// The extracted final answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub answer_text: String,
    pub extraction_status: ExtractionStatus,
}

/// Prompting mode for a generation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    Base,
    Metaprompt,
    SftModel,
}

impl std::str::FromStr for TraceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(TraceMode::Base),
            "metaprompt" => Ok(TraceMode::Metaprompt),
            "sft_model" | "sft-model" => Ok(TraceMode::SftModel),
            other => Err(format!("unknown trace mode: {other}")),
        }
    }
}

/// One model run over one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub example_id: String,
    pub mode: TraceMode,
    pub trace_text: String,
    pub final_text: String,
    pub prediction: Prediction,
    /// Chars of the whitespace-normalized trace.
    pub char_count: usize,
    /// Endpoint usage metadata for the full completion, when reported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_tokens: Option<u64>,
    pub degenerated: bool,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("example {example_id}: {source}")]
    Gateway {
        example_id: String,
        source: GatewayError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Return the interior of the last well-formed `<answer>...</answer>` pair,
/// whitespace-trimmed. Pairs are scanned left to right, each close tag paired
/// with the nearest preceding open tag, so the returned text never contains
/// either tag marker.
pub fn extract_answer(final_text: &str) -> Prediction {
    const OPEN: &str = "<answer>";
    const CLOSE: &str = "</answer>";
    let mut last: Option<&str> = None;
    let mut from = 0;
    while let Some(close_rel) = final_text[from..].find(CLOSE) {
        let close = from + close_rel;
        if let Some(open_rel) = final_text[from..close].rfind(OPEN) {
            let open = from + open_rel;
            last = Some(final_text[open + OPEN.len()..close].trim());
        }
        from = close + CLOSE.len();
    }
    match last {
        Some(answer) if !answer.is_empty() => Prediction {
            answer_text: answer.to_string(),
            extraction_status: ExtractionStatus::Tagged,
        },
        _ => Prediction {
            answer_text: String::new(),
            extraction_status: ExtractionStatus::MissingTags,
        },
    }
}

/// A generation degenerated iff it hit the length stop or its reported
/// completion tokens reached the context limit.
pub fn detect_degeneration(result: &CompletionResult, token_limit: u64) -> bool {
    result.finish_reason == FinishReason::Length
        || result
            .reported_completion_tokens
            .is_some_and(|tokens| tokens >= token_limit)
}

/// Default generation context limit (tokens).
pub const DEFAULT_TOKEN_LIMIT: u64 = 32_768;

/// Builds trace records for a run.
pub struct TraceGenerator<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateStore,
    pub model: String,
    pub sampling: SamplingParams,
    pub token_limit: u64,
}

impl<'a> TraceGenerator<'a> {
    pub fn new(
        gateway: &'a Gateway,
        templates: &'a TemplateStore,
        model: impl Into<String>,
    ) -> Self {
        TraceGenerator {
            gateway,
            templates,
            model: model.into(),
            sampling: SamplingParams::default(),
            token_limit: DEFAULT_TOKEN_LIMIT,
        }
    }

    pub fn with_sampling(mut self, sampling: SamplingParams) -> Self {
        self.sampling = sampling;
        self
    }

    /// The request this generator would issue for an example; also used by
    /// fixture authors.
    pub fn request_for(
        &self,
        example: &QAExample,
        mode: TraceMode,
        seed_tag: &str,
    ) -> Result<CompletionRequest, PromptError> {
        let template = match mode {
            TraceMode::Base | TraceMode::SftModel => TemplateId::BaseQa,
            TraceMode::Metaprompt => TemplateId::MetacogPrompting,
        };
        let bindings = Bindings::new()
            .set("context", render_context(example))
            .set("question", example.question.as_str());
        let messages = self.templates.render(template, &bindings)?;
        Ok(CompletionRequest::new(
            self.model.clone(),
            messages,
            self.sampling,
            seed_tag,
        ))
    }

    /// Generate one trace record.
    pub fn generate(
        &self,
        example: &QAExample,
        mode: TraceMode,
        seed_tag: &str,
    ) -> Result<TraceRecord, TraceError> {
        let request = self.request_for(example, mode, seed_tag)?;
        let result = self
            .gateway
            .complete(&request)
            .map_err(|source| TraceError::Gateway {
                example_id: example.id.clone(),
                source,
            })?;
        Ok(record_from_completion(
            &example.id,
            mode,
            &result,
            self.token_limit,
        ))
    }

    /// Generate records for every example with up to `workers` concurrent
    /// tasks, persisting each record to `writer` in input order as soon as
    /// its turn comes. Returned records preserve input order.
    pub fn generate_run(
        &self,
        examples: &[QAExample],
        mode: TraceMode,
        workers: usize,
        writer: &OrderedJsonlWriter,
    ) -> Result<Vec<TraceRecord>, TraceError> {
        parallel_map_ordered(examples, workers, |index, example| {
            let record = self.generate(example, mode, "sample-0")?;
            writer.submit(index, &record)?;
            Ok(record)
        })
    }
}

/// Assemble a record from a completion: split trace from final text, extract
/// the tagged answer, measure, and classify degeneration.
pub fn record_from_completion(
    example_id: &str,
    mode: TraceMode,
    result: &CompletionResult,
    token_limit: u64,
) -> TraceRecord {
    let (trace_text, final_text) = extract_reasoning(result);
    let degenerated = detect_degeneration(result, token_limit);
    let prediction = if degenerated {
        Prediction {
            answer_text: String::new(),
            extraction_status: ExtractionStatus::Degenerated,
        }
    } else {
        extract_answer(&final_text)
    };
    TraceRecord {
        example_id: example_id.to_string(),
        mode,
        char_count: normalized_char_count(&trace_text),
        trace_text,
        final_text,
        prediction,
        reported_tokens: result.reported_completion_tokens,
        degenerated,
        finish_reason: result.finish_reason,
    }
}
