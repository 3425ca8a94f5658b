use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid {field}: {rule}")]
    Invalid { field: String, rule: String },
    #[error("duplicate id `{id}` in {field}")]
    DuplicateId { field: String, id: String },
    #[error("unknown {kind} `{id}`")]
    Unknown { kind: &'static str, id: String },
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{template}` is missing variable `{variable}`")]
    MissingVariable { template: String, variable: String },
    #[error("provider credential rejected after {attempts} attempt(s): {message}")]
    Credential { attempts: u32, message: String },
    #[error("provider request failed after {attempts} attempt(s): {message}")]
    Provider { attempts: u32, message: String },
    #[error("no stakeholder could be parsed from the provider response")]
    EmptyParse,
    #[error("could not parse an answer for vignette `{vignette_id}`: {response:?}")]
    AnswerParse { vignette_id: String, response: String },
    #[error("selection rejected: {0}")]
    Selection(String),
    #[error("duplicate annotation by `{annotator_id}` for vignette `{vignette_id}`")]
    DuplicateAnnotation {
        annotator_id: String,
        vignette_id: String,
    },
    #[error("cannot assign {requested} vignettes from a corpus of {available}")]
    AssignmentTooLarge { requested: usize, available: usize },
    #[error("tally is empty for vignette `{0}`")]
    EmptyTally(String),
    #[error("record for vignette `{record}` does not belong to vignette `{expected}`")]
    RecordMismatch { record: String, expected: String },
    #[error("coverage gap: no annotations for {}", .0.join(", "))]
    CoverageGap(Vec<String>),
    #[error("degenerate contingency table: {0}")]
    DegenerateTable(String),
    #[error("snapshot mismatch: matrix built from {expected}, statistics from {found}")]
    SnapshotMismatch { expected: String, found: String },
    #[error("missing artifact {path}: run `{step}` first")]
    MissingArtifact { path: PathBuf, step: &'static str },
    #[error("unknown report format `{0}`")]
    UnknownFormat(String),
    #[error("domain violation: {0}")]
    Domain(String),
    #[error("study not loaded: {0}")]
    NotLoaded(&'static str),
}

impl Error {
    /// Stable machine-readable kind, used by the CLI, the HTTP API and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse(_) => "parse",
            Error::Invalid { .. } => "invalid",
            Error::DuplicateId { .. } => "duplicate-id",
            Error::Unknown { .. } => "unknown-id",
            Error::UnknownTemplate(_) => "unknown-template",
            Error::MissingVariable { .. } => "missing-variable",
            Error::Credential { .. } => "credential",
            Error::Provider { .. } => "provider",
            Error::EmptyParse => "empty-parse",
            Error::AnswerParse { .. } => "answer-parse",
            Error::Selection(_) => "selection",
            Error::DuplicateAnnotation { .. } => "duplicate-annotation",
            Error::AssignmentTooLarge { .. } => "assignment-too-large",
            Error::EmptyTally(_) => "empty-tally",
            Error::RecordMismatch { .. } => "record-mismatch",
            Error::CoverageGap(_) => "coverage-gap",
            Error::DegenerateTable(_) => "degenerate-table",
            Error::SnapshotMismatch { .. } => "snapshot-mismatch",
            Error::MissingArtifact { .. } => "missing-artifact",
            Error::UnknownFormat(_) => "unknown-format",
            Error::Domain(_) => "domain",
            Error::NotLoaded(_) => "not-loaded",
        }
    }

    /// Machine-readable form: `{"error": {"kind", "message", ...}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut body = serde_json::json!({ "kind": self.kind(), "message": self.to_string() });
        match self {
            Error::CoverageGap(ids) => body["vignettes"] = serde_json::json!(ids),
            Error::MissingArtifact { path, step } => {
                body["path"] = serde_json::json!(path.display().to_string());
                body["step"] = serde_json::json!(step);
            }
            _ => {}
        }
        serde_json::json!({ "error": body })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            rule: rule.into(),
        }
    }
}
