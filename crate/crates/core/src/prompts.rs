//! Prompt templates and placeholder substitution.
//!
//! The nine templates live as text assets under `templates/`. Eight cover the
//! pipeline's prompting surfaces (QA prompting, trace synthesis and
//! rewriting, and the four judge protocols); `correctness_judge` is this
//! project's own addition backing the LLM-accuracy metric. Placeholders use
//! single-brace `{name}` syntax; assets are stored trailing-whitespace
//! stripped, and rendering is strict: a missing binding or an unused binding
//! is an error, never a silent pass-through.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Message, Role};

/// Identifies one stored template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    AnswerInclusion,
    MbtS,
    MbtR,
    Overthinking,
    Underthinking,
    Metacognition,
    BaseQa,
    MetacogPrompting,
    CorrectnessJudge,
}

impl TemplateId {
    pub const ALL: [TemplateId; 9] = [
        TemplateId::AnswerInclusion,
        TemplateId::MbtS,
        TemplateId::MbtR,
        TemplateId::Overthinking,
        TemplateId::Underthinking,
        TemplateId::Metacognition,
        TemplateId::BaseQa,
        TemplateId::MetacogPrompting,
        TemplateId::CorrectnessJudge,
    ];

    /// Asset file stem for this template.
    pub fn file_stem(&self) -> &'static str {
        match self {
            TemplateId::AnswerInclusion => "answer_inclusion",
            TemplateId::MbtS => "mbt_s",
            TemplateId::MbtR => "mbt_r",
            TemplateId::Overthinking => "overthinking",
            TemplateId::Underthinking => "underthinking",
            TemplateId::Metacognition => "metacognition",
            TemplateId::BaseQa => "base_qa",
            TemplateId::MetacogPrompting => "metacog_prompting",
            TemplateId::CorrectnessJudge => "correctness_judge",
        }
    }
}

/// Placeholder values for one rendering. Recognized placeholders: `question`,
/// `answer`, `context`, `reasoning_trace`, and `prediction` (the last one
/// only by the correctness judge).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bindings {
    values: BTreeMap<String, String>,
}

pub const RECOGNIZED_PLACEHOLDERS: [&str; 5] = [
    "question",
    "answer",
    "context",
    "reasoning_trace",
    "prediction",
];

impl Bindings {
    pub fn new() -> Self {
        Bindings::default()
    }

    pub fn set(mut self, name: &str, value: impl Into<String>) -> Self {
        self.values.insert(name.to_string(), value.into());
        self
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(String::as_str)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {template}: missing binding for placeholder `{placeholder}`")]
    MissingBinding {
        template: String,
        placeholder: String,
    },
    #[error("template {template}: binding `{name}` is not used by this template")]
    UnusedBinding { template: String, name: String },
    #[error("template {template}: unrecognized placeholder `{placeholder}`")]
    UnknownPlaceholder {
        template: String,
        placeholder: String,
    },
    #[error("template asset missing for {0}")]
    MissingAsset(String),
    #[error("failed reading template dir {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// One parsed template: an ordered list of (role, body) sections.
#[derive(Debug, Clone)]
struct Template {
    sections: Vec<(Role, String)>,
}

fn parse_role_marker(line: &str) -> Option<Role> {
    match line.trim_end() {
        "[[system]]" => Some(Role::System),
        "[[user]]" => Some(Role::User),
        "[[assistant]]" => Some(Role::Assistant),
        _ => None,
    }
}

impl Template {
    /// Parse an asset. `[[system]]` / `[[user]]` marker lines split the file
    /// into messages; a file without markers is a single user message. Each
    /// section body is trailing-whitespace stripped.
    fn parse(raw: &str) -> Self {
        let mut sections: Vec<(Role, String)> = Vec::new();
        let mut current_role: Option<Role> = None;
        let mut current = String::new();
        let flush = |role: Option<Role>, body: &mut String, out: &mut Vec<(Role, String)>| {
            let trimmed = body.trim_end().to_string();
            if let Some(role) = role {
                out.push((role, trimmed));
            } else if !trimmed.is_empty() {
                out.push((Role::User, trimmed));
            }
            body.clear();
        };
        for line in raw.lines() {
            if let Some(role) = parse_role_marker(line) {
                flush(current_role, &mut current, &mut sections);
                current_role = Some(role);
            } else {
                current.push_str(line);
                current.push('\n');
            }
        }
        flush(current_role, &mut current, &mut sections);
        Template { sections }
    }

    /// Placeholder names appearing in any section, deduplicated.
    fn placeholders(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (_, body) in &self.sections {
            for name in scan_placeholders(body) {
                if !names.contains(&name) {
                    names.push(name);
                }
            }
        }
        names
    }
}

/// Find `{name}` placeholders whose name is a recognized identifier.
fn scan_placeholders(body: &str) -> Vec<String> {
    let mut out = Vec::new();
    let bytes = body.as_bytes();
    let mut i = 0;
    while let Some(open_rel) = body[i..].find('{') {
        let open = i + open_rel;
        let Some(close_rel) = body[open..].find('}') else {
            break;
        };
        let close = open + close_rel;
        let name = &body[open + 1..close];
        if !name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') {
            out.push(name.to_string());
        }
        i = close + 1;
        if i >= bytes.len() {
            break;
        }
    }
    out
}

/// Immutable set of loaded templates.
pub struct TemplateStore {
    templates: BTreeMap<TemplateId, Template>,
}

impl TemplateStore {
    /// Templates compiled into the binary from the `templates/` asset
    /// directory.
    pub fn builtin() -> Self {
        let raw: [(TemplateId, &str); 9] = [
            (
                TemplateId::AnswerInclusion,
                include_str!("../templates/answer_inclusion.txt"),
            ),
            (TemplateId::MbtS, include_str!("../templates/mbt_s.txt")),
            (TemplateId::MbtR, include_str!("../templates/mbt_r.txt")),
            (
                TemplateId::Overthinking,
                include_str!("../templates/overthinking.txt"),
            ),
            (
                TemplateId::Underthinking,
                include_str!("../templates/underthinking.txt"),
            ),
            (
                TemplateId::Metacognition,
                include_str!("../templates/metacognition.txt"),
            ),
            (TemplateId::BaseQa, include_str!("../templates/base_qa.txt")),
            (
                TemplateId::MetacogPrompting,
                include_str!("../templates/metacog_prompting.txt"),
            ),
            (
                TemplateId::CorrectnessJudge,
                include_str!("../templates/correctness_judge.txt"),
            ),
        ];
        let templates = raw
            .into_iter()
            .map(|(id, text)| (id, Template::parse(text)))
            .collect();
        TemplateStore { templates }
    }

    /// Load `<stem>.txt` assets from a directory, overriding the builtins.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let mut templates = BTreeMap::new();
        for id in TemplateId::ALL {
            let path = dir.join(format!("{}.txt", id.file_stem()));
            let raw = fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })?;
            templates.insert(id, Template::parse(&raw));
        }
        Ok(TemplateStore { templates })
    }

    /// Render a template into a message list. Every placeholder in the
    /// template must be bound and every binding must be used.
    pub fn render(&self, id: TemplateId, bindings: &Bindings) -> Result<Vec<Message>, PromptError> {
        let template = self
            .templates
            .get(&id)
            .ok_or_else(|| PromptError::MissingAsset(id.file_stem().to_string()))?;
        let required = template.placeholders();
        for placeholder in &required {
            if !RECOGNIZED_PLACEHOLDERS.contains(&placeholder.as_str()) {
                return Err(PromptError::UnknownPlaceholder {
                    template: id.file_stem().to_string(),
                    placeholder: placeholder.clone(),
                });
            }
            if bindings.get(placeholder).is_none() {
                return Err(PromptError::MissingBinding {
                    template: id.file_stem().to_string(),
                    placeholder: placeholder.clone(),
                });
            }
        }
        for name in bindings.names() {
            if !required.iter().any(|p| p == name) {
                return Err(PromptError::UnusedBinding {
                    template: id.file_stem().to_string(),
                    name: name.to_string(),
                });
            }
        }
        let messages = template
            .sections
            .iter()
            .map(|(role, body)| Message {
                role: *role,
                content: substitute(body, bindings),
            })
            .collect();
        Ok(messages)
    }
}

/// Single-pass substitution: bound values are inserted verbatim and never
/// rescanned, so a value containing `{question}` cannot be re-expanded.
fn substitute(body: &str, bindings: &Bindings) -> String {
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let Some(close_rel) = rest[open..].find('}') else {
            break;
        };
        let close = open + close_rel;
        let name = &rest[open + 1..close];
        if let Some(value) = bindings.get(name) {
            out.push_str(&rest[..open]);
            out.push_str(value);
            rest = &rest[close + 1..];
        } else {
            out.push_str(&rest[..open + 1]);
            rest = &rest[open + 1..];
        }
    }
    out.push_str(rest);
    out
}
