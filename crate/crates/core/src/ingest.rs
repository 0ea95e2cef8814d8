//! Loading MHQA source files (HotpotQA, MuSiQue, 2WikiMultiHopQA) into a
//! unified schema and rendering document context blocks for prompting.
//!
//! HotpotQA and 2WikiMultiHopQA ship as a single JSON array of records whose
//! `context` field is a list of `[title, [sentence, ...]]` pairs. MuSiQue
//! ships as line-delimited JSON with a `paragraphs` list carrying `title`,
//! `paragraph_text`, and `is_supporting`. All three map onto [`QAExample`].

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One context document given to the model alongside the question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub title: String,
    pub body: String,
    /// Only MuSiQue-style sources mark supporting paragraphs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_supporting: Option<bool>,
}

/// Which published dataset a record came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Hotpotqa,
    Musique,
    #[serde(rename = "2wiki")]
    TwoWiki,
}

impl DatasetSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetSource::Hotpotqa => "hotpotqa",
            DatasetSource::Musique => "musique",
            DatasetSource::TwoWiki => "2wiki",
        }
    }
}

impl std::str::FromStr for DatasetSource {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hotpotqa" => Ok(DatasetSource::Hotpotqa),
            "musique" => Ok(DatasetSource::Musique),
            "2wiki" => Ok(DatasetSource::TwoWiki),
            other => Err(IngestError::UnknownFormat(other.to_string())),
        }
    }
}

/// Dataset split the file belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

/// One multi-hop QA item in the unified schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub source: DatasetSource,
    pub split: Split,
    pub question: String,
    pub gold_answer: String,
    pub documents: Vec<Document>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unknown dataset format tag: {0}")]
    UnknownFormat(String),
    #[error("record {index}: missing or invalid field `{field}`")]
    MalformedRecord { index: usize, field: String },
    #[error("record {index} (id {id}): {reason}")]
    InvalidExample {
        index: usize,
        id: String,
        reason: String,
    },
    #[error("duplicate example id: {0}")]
    DuplicateId(String),
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
    #[error("record {index}: invalid JSON: {source}")]
    Json {
        index: usize,
        source: serde_json::Error,
    },
}

// Raw shapes of the published files.

#[derive(Deserialize)]
struct HotpotRecord {
    #[serde(rename = "_id")]
    id: Option<String>,
    question: Option<String>,
    answer: Option<String>,
    context: Option<Vec<(String, Vec<String>)>>,
}

#[derive(Deserialize)]
struct MusiqueRecord {
    id: Option<String>,
    question: Option<String>,
    answer: Option<String>,
    paragraphs: Option<Vec<MusiqueParagraph>>,
}

#[derive(Deserialize)]
struct MusiqueParagraph {
    title: Option<String>,
    paragraph_text: Option<String>,
    is_supporting: Option<bool>,
}

/// Load a published dataset file into the unified schema.
///
/// Every input record yields exactly one [`QAExample`], in file order.
/// Sentence lists are joined with a single space into [`Document::body`].
pub fn load_dataset<R: Read>(
    format: DatasetSource,
    source: R,
    split: Split,
) -> Result<Vec<QAExample>, IngestError> {
    let examples = match format {
        DatasetSource::Hotpotqa | DatasetSource::TwoWiki => {
            load_hotpot_style(format, source, split)?
        }
        DatasetSource::Musique => load_musique(source, split)?,
    };

    let mut seen = HashSet::new();
    for (index, ex) in examples.iter().enumerate() {
        validate_example(ex, index)?;
        if !seen.insert(ex.id.clone()) {
            return Err(IngestError::DuplicateId(ex.id.clone()));
        }
    }
    Ok(examples)
}

fn load_hotpot_style<R: Read>(
    format: DatasetSource,
    source: R,
    split: Split,
) -> Result<Vec<QAExample>, IngestError> {
    let records: Vec<serde_json::Value> =
        serde_json::from_reader(source).map_err(|source| IngestError::Json { index: 0, source })?;
    records
        .into_iter()
        .enumerate()
        .map(|(index, value)| {
            let record: HotpotRecord = serde_json::from_value(value)
                .map_err(|source| IngestError::Json { index, source })?;
            hotpot_to_example(format, record, index, split)
        })
        .collect()
}

fn hotpot_to_example(
    format: DatasetSource,
    record: HotpotRecord,
    index: usize,
    split: Split,
) -> Result<QAExample, IngestError> {
    let missing = |field: &str| IngestError::MalformedRecord {
        index,
        field: field.to_string(),
    };
    let id = record.id.ok_or_else(|| missing("_id"))?;
    let question = record.question.ok_or_else(|| missing("question"))?;
    let answer = record.answer.ok_or_else(|| missing("answer"))?;
    let context = record.context.ok_or_else(|| missing("context"))?;

    let documents = context
        .into_iter()
        .map(|(title, sentences)| Document {
            title,
            body: sentences.join(" "),
            is_supporting: None,
        })
        .collect();

    Ok(QAExample {
        id,
        source: format,
        split,
        question,
        gold_answer: answer,
        documents,
    })
}

fn load_musique<R: Read>(source: R, split: Split) -> Result<Vec<QAExample>, IngestError> {
    let reader = BufReader::new(source);
    let mut examples = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MusiqueRecord =
            serde_json::from_str(&line).map_err(|source| IngestError::Json { index, source })?;
        examples.push(musique_to_example(record, index, split)?);
    }
    Ok(examples)
}

fn musique_to_example(
    record: MusiqueRecord,
    index: usize,
    split: Split,
) -> Result<QAExample, IngestError> {
    let missing = |field: String| IngestError::MalformedRecord { index, field };
    let id = record.id.ok_or_else(|| missing("id".into()))?;
    let question = record.question.ok_or_else(|| missing("question".into()))?;
    let answer = record.answer.ok_or_else(|| missing("answer".into()))?;
    let paragraphs = record
        .paragraphs
        .ok_or_else(|| missing("paragraphs".into()))?;

    let documents = paragraphs
        .into_iter()
        .enumerate()
        .map(|(p, paragraph)| {
            Ok(Document {
                title: paragraph
                    .title
                    .ok_or_else(|| missing(format!("paragraphs[{p}].title")))?,
                body: paragraph
                    .paragraph_text
                    .ok_or_else(|| missing(format!("paragraphs[{p}].paragraph_text")))?,
                is_supporting: paragraph.is_supporting,
            })
        })
        .collect::<Result<Vec<_>, IngestError>>()?;

    Ok(QAExample {
        id,
        source: DatasetSource::Musique,
        split,
        question,
        gold_answer: answer,
        documents,
    })
}

fn validate_example(ex: &QAExample, index: usize) -> Result<(), IngestError> {
    let invalid = |reason: &str| IngestError::InvalidExample {
        index,
        id: ex.id.clone(),
        reason: reason.to_string(),
    };
    if ex.id.trim().is_empty() {
        return Err(invalid("empty id"));
    }
    if ex.question.trim().is_empty() {
        return Err(invalid("empty question"));
    }
    if ex.gold_answer.trim().is_empty() {
        return Err(invalid("empty gold answer"));
    }
    if ex.documents.is_empty() {
        return Err(invalid("no documents"));
    }
    for (d, doc) in ex.documents.iter().enumerate() {
        if doc.title.trim().is_empty() {
            return Err(invalid(&format!("documents[{d}] has empty title")));
        }
        if doc.body.trim().is_empty() {
            return Err(invalid(&format!("documents[{d}] has empty body")));
        }
    }
    Ok(())
}

/// Keep only paragraphs marked `is_supporting` (MuSiQue-style sources).
/// Documents without the marker are kept as-is.
pub fn supporting_only(example: &mut QAExample) {
    example
        .documents
        .retain(|doc| doc.is_supporting != Some(false));
}

/// Render the document block substituted for `{context}` in prompts.
///
/// One segment per document, in order: `Title: <title>\n<body>`, segments
/// separated by one blank line. Byte-identical for identical input.
pub fn render_context(example: &QAExample) -> String {
    example
        .documents
        .iter()
        .map(|doc| format!("Title: {}\n{}", doc.title, doc.body))
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hotpot_json(n_docs: usize) -> String {
        let mut records = Vec::new();
        let context: Vec<serde_json::Value> = (0..n_docs)
            .map(|d| {
                serde_json::json!([
                    format!("Title {d}"),
                    ["First sentence.", "Second sentence."]
                ])
            })
            .collect();
        records.push(serde_json::json!({
            "_id": "h1",
            "question": "Who?",
            "answer": "Somebody",
            "context": context,
        }));
        serde_json::to_string(&records).unwrap()
    }

    #[test]
    fn hotpot_record_maps_documents_and_joins_sentences() {
        let data = hotpot_json(10);
        let examples =
            load_dataset(DatasetSource::Hotpotqa, data.as_bytes(), Split::Train).unwrap();
        assert_eq!(examples.len(), 1);
        let ex = &examples[0];
        assert_eq!(ex.documents.len(), 10);
        assert_eq!(ex.documents[0].body, "First sentence. Second sentence.");
        assert_eq!(ex.source, DatasetSource::Hotpotqa);
        assert!(ex.documents.iter().all(|d| d.is_supporting.is_none()));
    }

    #[test]
    fn musique_record_preserves_supporting_flags() {
        let mut lines = String::new();
        let paragraphs: Vec<serde_json::Value> = (0..20)
            .map(|p| {
                serde_json::json!({
                    "title": format!("P{p}"),
                    "paragraph_text": format!("Text {p}."),
                    "is_supporting": p < 3,
                })
            })
            .collect();
        lines.push_str(
            &serde_json::to_string(&serde_json::json!({
                "id": "m1",
                "question": "Q?",
                "answer": "A",
                "paragraphs": paragraphs,
            }))
            .unwrap(),
        );
        lines.push('\n');
        let examples =
            load_dataset(DatasetSource::Musique, lines.as_bytes(), Split::Validation).unwrap();
        let ex = &examples[0];
        assert_eq!(ex.documents.len(), 20);
        let supporting = ex
            .documents
            .iter()
            .filter(|d| d.is_supporting == Some(true))
            .count();
        assert_eq!(supporting, 3);
    }

    #[test]
    fn missing_answer_field_names_the_field() {
        let data = r#"[{"_id": "x", "question": "Q?", "context": [["T", ["S."]]]}]"#;
        let err = load_dataset(DatasetSource::TwoWiki, data.as_bytes(), Split::Train).unwrap_err();
        match err {
            IngestError::MalformedRecord { index, field } => {
                assert_eq!(index, 0);
                assert_eq!(field, "answer");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn unknown_format_tag_is_a_configuration_error() {
        let err = "squad".parse::<DatasetSource>().unwrap_err();
        assert!(matches!(err, IngestError::UnknownFormat(_)));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let data = r#"[
            {"_id": "a", "question": "Q?", "answer": "A", "context": [["T", ["S."]]]},
            {"_id": "a", "question": "Q?", "answer": "A", "context": [["T", ["S."]]]}
        ]"#;
        let err = load_dataset(DatasetSource::Hotpotqa, data.as_bytes(), Split::Train).unwrap_err();
        assert!(matches!(err, IngestError::DuplicateId(_)));
    }

    fn example(docs: &[(&str, &str)]) -> QAExample {
        QAExample {
            id: "e".into(),
            source: DatasetSource::Hotpotqa,
            split: Split::Train,
            question: "Q?".into(),
            gold_answer: "A".into(),
            documents: docs
                .iter()
                .map(|(t, b)| Document {
                    title: t.to_string(),
                    body: b.to_string(),
                    is_supporting: None,
                })
                .collect(),
        }
    }

    #[test]
    fn render_context_single_block() {
        assert_eq!(render_context(&example(&[("A", "B")])), "Title: A\nB");
    }

    #[test]
    fn render_context_separates_blocks_with_one_blank_line() {
        let rendered = render_context(&example(&[("A", "B"), ("C", "D")]));
        assert_eq!(rendered, "Title: A\nB\n\nTitle: C\nD");
    }

    #[test]
    fn render_context_is_deterministic_and_ordered() {
        let ex = example(&[("First", "x"), ("Second", "y"), ("Third", "z")]);
        let once = render_context(&ex);
        let twice = render_context(&ex);
        assert_eq!(once, twice);
        // each title exactly once, in input order
        let first = once.find("Title: First").unwrap();
        let second = once.find("Title: Second").unwrap();
        let third = once.find("Title: Third").unwrap();
        assert!(first < second && second < third);
        assert_eq!(once.matches("Title: First").count(), 1);
    }

    #[test]
    fn supporting_only_drops_unmarked_false() {
        let mut ex = example(&[("A", "a"), ("B", "b")]);
        ex.documents[0].is_supporting = Some(true);
        ex.documents[1].is_supporting = Some(false);
        supporting_only(&mut ex);
        assert_eq!(ex.documents.len(), 1);
        assert_eq!(ex.documents[0].title, "A");
    }

    #[test]
    fn unified_schema_round_trips_identity_fields() {
        let data = hotpot_json(3);
        let examples =
            load_dataset(DatasetSource::Hotpotqa, data.as_bytes(), Split::Train).unwrap();
        let line = serde_json::to_string(&examples[0]).unwrap();
        let back: QAExample = serde_json::from_str(&line).unwrap();
        assert_eq!(back.id, examples[0].id);
        assert_eq!(back.question, examples[0].question);
        assert_eq!(back.gold_answer, examples[0].gold_answer);
        assert_eq!(back, examples[0]);
    }
}
