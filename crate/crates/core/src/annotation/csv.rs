use std::collections::HashSet;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{validate_record, AnnotationRecord, AnnotatorKind};
use crate::error::{Error, Result};
use crate::vignette::AugmentedVignette;

pub const CSV_HEADER: [&str; 8] = [
    "annotator_id",
    "annotator_kind",
    "vignette_id",
    "harm_1",
    "harm_2",
    "rep_harm_1",
    "rep_harm_2",
    "submitted_at",
];

/// Why a CSV row was not loaded. `row` is the 1-based line number in the
/// file, the header being line 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowDiagnostic {
    pub row: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vignette_id: Option<String>,
    pub kind: String,
    pub message: String,
}

impl RowDiagnostic {
    pub(crate) fn new(row: usize, vignette_id: Option<&str>, err: &Error) -> Self {
        RowDiagnostic {
            row,
            vignette_id: vignette_id.map(str::to_string),
            kind: err.kind().to_string(),
            message: err.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportOutcome {
    /// Hex SHA-256 of the file contents.
    pub digest: String,
    /// Valid rows as (line number, record).
    pub accepted: Vec<(usize, AnnotationRecord)>,
    pub rejected: Vec<RowDiagnostic>,
}

fn parse_row(row: &csv::StringRecord) -> Result<AnnotationRecord> {
    if row.len() != CSV_HEADER.len() {
        return Err(Error::Parse(format!("expected {} fields, found {}", CSV_HEADER.len(), row.len())));
    }
    let f = |i: usize| row.get(i).unwrap_or("").trim();
    let kind = match f(1) {
        "human" => AnnotatorKind::Human,
        "llm" => AnnotatorKind::Llm,
        other => return Err(Error::Parse(format!("annotator_kind `{other}` is not human or llm"))),
    };
    // Multi-select exports may pack several ids into one cell, `a;b`.
    let slots = |a: usize, b: usize| {
        [f(a), f(b)]
            .into_iter()
            .flat_map(|cell| cell.split(';'))
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect()
    };
    let submitted_at = DateTime::parse_from_rfc3339(f(7))
        .map_err(|e| Error::Parse(format!("submitted_at `{}`: {e}", f(7))))?
        .with_timezone(&Utc);
    Ok(AnnotationRecord {
        annotator_id: f(0).to_string(),
        annotator_kind: kind,
        vignette_id: f(2).to_string(),
        individual_harms: slots(3, 4),
        representational_harms: slots(5, 6),
        submitted_at,
    })
}

/// Schema-level parse. Fails only on a header mismatch; per-row problems are
/// returned alongside the row's line number.
pub fn parse_csv(text: &str) -> Result<Vec<(usize, Result<AnnotationRecord>)>> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::Parse(format!("csv header: {e}")))?;
    if header.iter().map(str::trim).ne(CSV_HEADER.iter().copied()) {
        return Err(Error::invalid(
            "csv header",
            format!("expected `{}`", CSV_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let fallback = i + 2;
        match row {
            Ok(r) => {
                let line = r.position().map(|p| p.line() as usize).unwrap_or(fallback);
                out.push((line, parse_row(&r)));
            }
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(fallback);
                out.push((line, Err(Error::Parse(e.to_string()))));
            }
        }
    }
    Ok(out)
}

/// Parses and validates CSV text against the corpus. Invalid rows are
/// reported; valid rows from the same text are kept.
pub fn import_csv_text(text: &str, corpus: &[AugmentedVignette]) -> Result<ImportOutcome> {
    let digest = hex::encode(Sha256::digest(text.as_bytes()));
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = HashSet::new();
    for (line, parsed) in parse_csv(text)? {
        let record = match parsed {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RowDiagnostic::new(line, None, &e));
                continue;
            }
        };
        let vid = record.vignette_id.clone();
        let checked = crate::vignette::find(corpus, &vid).and_then(|v| validate_record(&record, v));
        if let Err(e) = checked {
            rejected.push(RowDiagnostic::new(line, Some(&vid), &e));
            continue;
        }
        if !seen.insert((record.annotator_id.clone(), vid.clone())) {
            let e = Error::DuplicateAnnotation {
                annotator_id: record.annotator_id.clone(),
                vignette_id: vid.clone(),
            };
            rejected.push(RowDiagnostic::new(line, Some(&vid), &e));
            continue;
        }
        accepted.push((line, record));
    }
    Ok(ImportOutcome {
        digest,
        accepted,
        rejected,
    })
}

pub fn import_annotations(path: &Path, corpus: &[AugmentedVignette]) -> Result<ImportOutcome> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    import_csv_text(&text, corpus)
}

/// Serializes records in the interchange schema. Fails for records with more
/// selections than the schema has slots.
pub fn records_to_csv(records: &[AnnotationRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Parse(format!("csv write: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        if r.individual_harms.len() > 2 || r.representational_harms.len() > 2 {
            return Err(Error::Selection(format!(
                "record ({}, {}) has more selections than the CSV schema holds",
                r.annotator_id, r.vignette_id
            )));
        }
        let slot = |v: &[String], i: usize| v.get(i).cloned().unwrap_or_default();
        w.write_record([
            r.annotator_id.clone(),
            r.annotator_kind.as_str().to_string(),
            r.vignette_id.clone(),
            slot(&r.individual_harms, 0),
            slot(&r.individual_harms, 1),
            slot(&r.representational_harms, 0),
            slot(&r.representational_harms, 1),
            r.submitted_at.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(format!("csv write: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
