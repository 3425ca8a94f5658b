use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::csv::{import_csv_text, RowDiagnostic};
use super::{validate_record, AnnotationRecord};
use crate::error::{Error, Result};
use crate::vignette::{find, AugmentedVignette};

const RECORDS: &str = "records.ndjson";
const ASSIGNMENTS: &str = "assignments.json";
const IMPORTS: &str = "imports.json";

/// Append-only annotation store, optionally backed by a directory holding
/// `records.ndjson`, `assignments.json` and `imports.json`.
#[derive(Debug)]
pub struct AnnotationStore {
    study_id: String,
    dir: Option<PathBuf>,
    records: Vec<AnnotationRecord>,
    keys: HashSet<(String, String)>,
    assignments: BTreeMap<String, Vec<String>>,
    imports: BTreeSet<String>,
    hasher: Sha256,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportSummary {
    pub digest: String,
    /// True when this exact file content was imported before.
    pub skipped: bool,
    pub accepted: usize,
    pub rejected: Vec<RowDiagnostic>,
}

fn record_line(r: &AnnotationRecord) -> String {
    serde_json::to_string(r).expect("record serializes")
}

impl AnnotationStore {
    pub fn in_memory(study_id: &str) -> Self {
        AnnotationStore {
            study_id: study_id.to_string(),
            dir: None,
            records: Vec::new(),
            keys: HashSet::new(),
            assignments: BTreeMap::new(),
            imports: BTreeSet::new(),
            hasher: Sha256::new(),
        }
    }

    /// Opens (or creates) a store directory, re-validating every stored
    /// record against `corpus`.
    pub fn open(dir: &Path, study_id: &str, corpus: &[AugmentedVignette]) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut store = AnnotationStore::in_memory(study_id);
        let path = dir.join(RECORDS);
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let r: AnnotationRecord = serde_json::from_str(line)
                    .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
                validate_record(&r, find(corpus, &r.vignette_id)?)?;
                store.push(r)?;
            }
        }
        let path = dir.join(ASSIGNMENTS);
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            store.assignments = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        }
        let path = dir.join(IMPORTS);
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            store.imports = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        }
        store.dir = Some(dir.to_path_buf());
        Ok(store)
    }

    pub fn study_id(&self) -> &str {
        &self.study_id
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records_for<'a>(&'a self, vignette_id: &'a str) -> impl Iterator<Item = &'a AnnotationRecord> + 'a {
        self.records.iter().filter(move |r| r.vignette_id == vignette_id)
    }

    pub fn contains(&self, annotator_id: &str, vignette_id: &str) -> bool {
        self.keys.contains(&(annotator_id.to_string(), vignette_id.to_string()))
    }

    /// Hex SHA-256 over the stored records in append order.
    pub fn snapshot_digest(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }

    fn push(&mut self, r: AnnotationRecord) -> Result<()> {
        let key = (r.annotator_id.clone(), r.vignette_id.clone());
        if self.keys.contains(&key) {
            return Err(Error::DuplicateAnnotation {
                annotator_id: key.0,
                vignette_id: key.1,
            });
        }
        self.hasher.update(record_line(&r).as_bytes());
        self.hasher.update(b"\n");
        self.keys.insert(key);
        self.records.push(r);
        Ok(())
    }

    fn persist_records(&self, new: &[AnnotationRecord]) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(RECORDS);
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut buf = String::new();
        for r in new {
            buf.push_str(&record_line(r));
            buf.push('\n');
        }
        f.write_all(buf.as_bytes()).map_err(|e| Error::io(&path, e))?;
        f.sync_data().map_err(|e| Error::io(&path, e))
    }

    fn persist_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(name);
        let tmp = dir.join(format!(".{name}.tmp"));
        let mut text = serde_json::to_string_pretty(value).expect("serializes");
        text.push('\n');
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Validates and appends one record.
    pub fn append(&mut self, record: AnnotationRecord, corpus: &[AugmentedVignette]) -> Result<()> {
        validate_record(&record, find(corpus, &record.vignette_id)?)?;
        self.push(record.clone())?;
        self.persist_records(std::slice::from_ref(&record))
    }

    /// Appends already validated records, skipping (annotator, vignette)
    /// pairs that are present. Returns the number appended.
    pub fn append_all(&mut self, records: Vec<AnnotationRecord>, corpus: &[AugmentedVignette]) -> Result<usize> {
        let mut added = Vec::new();
        for r in records {
            validate_record(&r, find(corpus, &r.vignette_id)?)?;
            if self.contains(&r.annotator_id, &r.vignette_id) {
                continue;
            }
            self.push(r.clone())?;
            added.push(r);
        }
        self.persist_records(&added)?;
        Ok(added.len())
    }

    pub fn assignment(&self, annotator_id: &str) -> Option<&[String]> {
        self.assignments.get(annotator_id).map(Vec::as_slice)
    }

    pub fn assignments(&self) -> &BTreeMap<String, Vec<String>> {
        &self.assignments
    }

    pub(crate) fn log_assignment(&mut self, annotator_id: &str, ids: &[String]) -> Result<()> {
        if self.assignments.contains_key(annotator_id) {
            return Err(Error::DuplicateId {
                field: "assignment_log".into(),
                id: annotator_id.to_string(),
            });
        }
        self.assignments.insert(annotator_id.to_string(), ids.to_vec());
        self.persist_json(ASSIGNMENTS, &self.assignments)
    }

    /// Imports CSV text. Content seen before is skipped by digest; rows
    /// clashing with stored records are reported, not appended.
    pub fn import_text(&mut self, text: &str, corpus: &[AugmentedVignette]) -> Result<ImportSummary> {
        let outcome = import_csv_text(text, corpus)?;
        if self.imports.contains(&outcome.digest) {
            log::info!("import {} already applied, skipping", &outcome.digest[..12]);
            return Ok(ImportSummary {
                digest: outcome.digest,
                skipped: true,
                accepted: 0,
                rejected: Vec::new(),
            });
        }
        let mut rejected = outcome.rejected;
        let mut added = Vec::new();
        for (line, r) in outcome.accepted {
            match self.push(r.clone()) {
                Ok(()) => added.push(r),
                Err(e) => rejected.push(RowDiagnostic::new(line, Some(&r.vignette_id), &e)),
            }
        }
        rejected.sort_by_key(|d| d.row);
        self.persist_records(&added)?;
        self.imports.insert(outcome.digest.clone());
        self.persist_json(IMPORTS, &self.imports)?;
        Ok(ImportSummary {
            digest: outcome.digest,
            skipped: false,
            accepted: added.len(),
            rejected,
        })
    }

    pub fn import_file(&mut self, path: &Path, corpus: &[AugmentedVignette]) -> Result<ImportSummary> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.import_text(&text, corpus)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::tests::corpus;
    use crate::annotation::{assign_vignettes, AnnotatorKind};
    use chrono::DateTime;

    fn rec(annotator: &str, vid: &str, harm: &str) -> AnnotationRecord {
        AnnotationRecord {
            annotator_id: annotator.into(),
            annotator_kind: AnnotatorKind::Human,
            vignette_id: vid.into(),
            individual_harms: vec![harm.into()],
            representational_harms: vec![],
            submitted_at: DateTime::from_timestamp(1, 0).unwrap(),
        }
    }

    #[test]
    fn persists_and_revalidates() {
        let c = corpus("hiring");
        let dir = tempfile::tempdir().unwrap();
        let digest = {
            let mut s = AnnotationStore::open(dir.path(), "hiring-study", &c).unwrap();
            s.append(rec("a", "hiring.applicant.evaluation", "alienation"), &c).unwrap();
            s.append(rec("b", "hiring.applicant.evaluation", "economic-loss"), &c).unwrap();
            assert!(matches!(
                s.append(rec("a", "hiring.applicant.evaluation", "economic-loss"), &c),
                Err(Error::DuplicateAnnotation { .. })
            ));
            assert!(s.append(rec("c", "hiring.applicant.evaluation", "erasure"), &c).is_err());
            assign_vignettes(&mut s, "a", &c, 2, 1).unwrap();
            assert_eq!(s.len(), 2);
            s.snapshot_digest()
        };
        let s = AnnotationStore::open(dir.path(), "hiring-study", &c).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.snapshot_digest(), digest);
        assert_eq!(s.assignment("a").unwrap().len(), 2);

        // A tampered record fails re-validation on load.
        let path = dir.path().join(RECORDS);
        let text = std::fs::read_to_string(&path).unwrap().replace("economic-loss", "stereotyping");
        std::fs::write(&path, text).unwrap();
        assert!(AnnotationStore::open(dir.path(), "hiring-study", &c).is_err());
    }

    #[test]
    fn reimport_is_skipped() {
        let c = corpus("hiring");
        let csv = "annotator_id,annotator_kind,vignette_id,harm_1,harm_2,rep_harm_1,rep_harm_2,submitted_at\n\
                   p1,human,hiring.applicant.evaluation,alienation,,,,2025-01-01T00:00:00Z\n\
                   p2,human,hiring.applicant.evaluation,bogus,,,,2025-01-01T00:00:00Z\n";
        let mut s = AnnotationStore::in_memory("x");
        let first = s.import_text(csv, &c).unwrap();
        assert_eq!((first.skipped, first.accepted, first.rejected.len()), (false, 1, 1));
        let before = s.snapshot_digest();
        let second = s.import_text(csv, &c).unwrap();
        assert!(second.skipped);
        assert_eq!(s.len(), 1);
        assert_eq!(s.snapshot_digest(), before);

        // Different file, overlapping row: reported as a duplicate.
        let other = format!("{csv}p3,human,hiring.applicant.evaluation,alienation,,,,2025-01-01T00:00:00Z\n");
        let third = s.import_text(&other, &c).unwrap();
        assert_eq!(third.accepted, 1);
        assert!(third.rejected.iter().any(|d| d.kind == "duplicate-annotation" && d.row == 2));
    }

    #[test]
    fn digest_tracks_content() {
        let c = corpus("hiring");
        let mut a = AnnotationStore::in_memory("x");
        let empty = a.snapshot_digest();
        a.append(rec("a", "hiring.applicant.evaluation", "alienation"), &c).unwrap();
        assert_ne!(a.snapshot_digest(), empty);
        let mut b = AnnotationStore::in_memory("x");
        b.append_all(vec![rec("a", "hiring.applicant.evaluation", "alienation")], &c).unwrap();
        assert_eq!(a.snapshot_digest(), b.snapshot_digest());
    }
}
