//! Harm selections from human and LLM annotators.

mod csv;
mod store;

use std::collections::HashSet;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::genai::{generate, PromptRequest, Provider, ANNOTATION_TEMPERATURE};
use crate::taxonomy::{check_token, Scope};
use crate::vignette::{AugmentedVignette, CellFailure, McqOption};

pub use self::csv::{import_annotations, import_csv_text, parse_csv, records_to_csv, ImportOutcome, RowDiagnostic, CSV_HEADER};
pub use store::{AnnotationStore, ImportSummary};

/// Reserved id of the single LLM annotator.
pub const LLM_ANNOTATOR_ID: &str = "llm-agent-1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotatorKind {
    Human,
    Llm,
}

impl AnnotatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnnotatorKind::Human => "human",
            AnnotatorKind::Llm => "llm",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub annotator_id: String,
    pub annotator_kind: AnnotatorKind,
    pub vignette_id: String,
    pub individual_harms: Vec<String>,
    #[serde(default)]
    pub representational_harms: Vec<String>,
    pub submitted_at: DateTime<Utc>,
}

impl AnnotationRecord {
    pub fn harms(&self, scope: Scope) -> &[String] {
        match scope {
            Scope::Individual => &self.individual_harms,
            Scope::Representational => &self.representational_harms,
        }
    }
}

fn option_ids(opts: &[McqOption]) -> String {
    opts.iter().map(|o| o.id.as_str()).collect::<Vec<_>>().join(", ")
}

/// Checks a record against its vignette's MCQ.
///
/// A record needs at least one selection. The individual question may be
/// left empty only on vignettes that carry a representational question.
pub fn validate_record(record: &AnnotationRecord, vignette: &AugmentedVignette) -> Result<()> {
    check_token("annotator_id", &record.annotator_id)?;
    if record.vignette_id != vignette.id() {
        return Err(Error::RecordMismatch {
            record: record.vignette_id.clone(),
            expected: vignette.id().to_string(),
        });
    }
    let has_rep = vignette.representational_options.is_some();
    if !has_rep && !record.representational_harms.is_empty() {
        return Err(Error::Selection(format!(
            "vignette `{}` has no representational question",
            vignette.id()
        )));
    }
    for scope in [Scope::Individual, Scope::Representational] {
        let picked = record.harms(scope);
        let opts = vignette.options(scope);
        if picked.len() > vignette.max_selections {
            return Err(Error::Selection(format!(
                "{} {} harms selected, at most {} allowed (options: {})",
                picked.len(),
                scope.as_str(),
                vignette.max_selections,
                option_ids(opts)
            )));
        }
        let mut seen = HashSet::new();
        for h in picked {
            if !seen.insert(h.as_str()) {
                return Err(Error::Selection(format!("harm `{h}` selected twice")));
            }
            if !vignette.has_option(scope, h) {
                return Err(Error::Selection(format!(
                    "unknown {} harm `{h}` (options: {})",
                    scope.as_str(),
                    option_ids(opts)
                )));
            }
        }
    }
    if record.individual_harms.is_empty() {
        if !has_rep {
            return Err(Error::Selection(format!(
                "at least one harm required (options: {})",
                option_ids(&vignette.individual_options)
            )));
        }
        if record.representational_harms.is_empty() {
            return Err(Error::Selection("at least one harm required".into()));
        }
    }
    Ok(())
}

/// Deterministic, uniform choice of `count` distinct vignettes for an annotator.
pub fn draw_assignment(annotator_id: &str, corpus: &[AugmentedVignette], count: usize, seed: u64) -> Result<Vec<String>> {
    if count > corpus.len() {
        return Err(Error::AssignmentTooLarge {
            requested: count,
            available: corpus.len(),
        });
    }
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(annotator_id.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha20Rng::from_seed(digest);
    Ok(rand::seq::index::sample(&mut rng, corpus.len(), count)
        .into_iter()
        .map(|i| corpus[i].id().to_string())
        .collect())
}

/// Returns the logged assignment for `annotator_id`, or draws and logs one.
pub fn assign_vignettes(
    store: &mut AnnotationStore,
    annotator_id: &str,
    corpus: &[AugmentedVignette],
    count: usize,
    seed: u64,
) -> Result<Vec<String>> {
    check_token("annotator_id", annotator_id)?;
    if let Some(ids) = store.assignment(annotator_id) {
        return Ok(ids.to_vec());
    }
    let ids = draw_assignment(annotator_id, corpus, count, seed)?;
    store.log_assignment(annotator_id, &ids)?;
    Ok(ids)
}

/// Extracts option ids from a free-text answer. Lines may carry bullets,
/// numbering or quotes, and may name an option by id or by label.
pub fn parse_answer(response: &str, options: &[McqOption]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in response.lines().flat_map(|l| l.split(',')) {
        let t = line
            .trim()
            .trim_start_matches(|c: char| c.is_ascii_digit() || matches!(c, '.' | ')' | '-' | '*' | '•'))
            .trim()
            .trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '*' | '.'))
            .trim();
        if t.is_empty() {
            continue;
        }
        let t = t.split_once(':').map(|(id, _)| id.trim()).unwrap_or(t);
        let hit = options
            .iter()
            .find(|o| o.id == t)
            .or_else(|| options.iter().find(|o| o.id.eq_ignore_ascii_case(t) || o.label.eq_ignore_ascii_case(t)));
        if let Some(o) = hit {
            if !out.contains(&o.id) {
                out.push(o.id.clone());
            }
        }
    }
    out
}

fn ask(
    av: &AugmentedVignette,
    question: &str,
    options: &[McqOption],
    provider: &dyn Provider,
) -> Result<Vec<String>> {
    let listing = options
        .iter()
        .map(|o| format!("{}: {}", o.id, o.blurb))
        .collect::<Vec<_>>()
        .join("\n");
    let request = PromptRequest::new(
        "annotate",
        [
            ("vignette", av.vignette.text.clone()),
            ("question", question.to_string()),
            ("options", listing),
            ("max_selections", av.max_selections.to_string()),
        ],
    )
    .with_temperature(ANNOTATION_TEMPERATURE);
    let mut last = String::new();
    for attempt in 0..2 {
        let text = generate(&request, provider)?.text;
        let ids = parse_answer(&text, options);
        if !ids.is_empty() && ids.len() <= av.max_selections {
            return Ok(ids);
        }
        if attempt == 0 {
            log::warn!("unparseable answer for {}, retrying", av.id());
        }
        last = text;
    }
    Err(Error::AnswerParse {
        vignette_id: av.id().to_string(),
        response: last,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LlmAnnotation {
    pub records: Vec<AnnotationRecord>,
    pub failures: Vec<CellFailure>,
}

/// Has the LLM annotator answer every vignette's MCQs. A vignette whose
/// answer cannot be parsed after one retry is reported as a failure.
pub fn llm_annotate(corpus: &[AugmentedVignette], provider: &dyn Provider, submitted_at: DateTime<Utc>) -> LlmAnnotation {
    let mut out = LlmAnnotation::default();
    for av in corpus {
        let result = (|| {
            let individual = ask(av, &av.vignette.question, &av.individual_options, provider)?;
            let representational = match (&av.representational_question, &av.representational_options) {
                (Some(q), Some(opts)) => ask(av, q, opts, provider)?,
                _ => Vec::new(),
            };
            let record = AnnotationRecord {
                annotator_id: LLM_ANNOTATOR_ID.to_string(),
                annotator_kind: AnnotatorKind::Llm,
                vignette_id: av.id().to_string(),
                individual_harms: individual,
                representational_harms: representational,
                submitted_at,
            };
            validate_record(&record, av)?;
            Ok::<_, Error>(record)
        })();
        match result {
            Ok(r) => out.records.push(r),
            Err(e) => out.failures.push(CellFailure {
                vignette_id: av.id().to_string(),
                kind: e.kind().to_string(),
                message: e.to_string(),
            }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genai::{MockProvider, ScriptedProvider};
    use crate::taxonomy::bundled_study;
    use crate::vignette::{build_corpus, Overrides};

    pub(crate) fn corpus(name: &str) -> Vec<AugmentedVignette> {
        let cfg = bundled_study(name).unwrap();
        build_corpus(&cfg, &MockProvider::new(0), &Overrides::new(), 0).unwrap().vignettes
    }

    fn rec(vid: &str, ind: &[&str], rep: &[&str]) -> AnnotationRecord {
        AnnotationRecord {
            annotator_id: "a1".into(),
            annotator_kind: AnnotatorKind::Human,
            vignette_id: vid.into(),
            individual_harms: ind.iter().map(|s| s.to_string()).collect(),
            representational_harms: rep.iter().map(|s| s.to_string()).collect(),
            submitted_at: DateTime::from_timestamp(0, 0).unwrap(),
        }
    }

    #[test]
    fn record_rules() {
        let c = corpus("hiring");
        let single = crate::vignette::find(&c, "hiring.applicant.evaluation").unwrap();
        let group = crate::vignette::find(&c, "hiring.marginalized-applicants.evaluation").unwrap();
        validate_record(&rec(single.id(), &["opportunity-loss", "economic-loss"], &[]), single).unwrap();
        let three = validate_record(&rec(single.id(), &["opportunity-loss", "economic-loss", "alienation"], &[]), single);
        match three {
            Err(Error::Selection(m)) => assert!(m.contains("privacy-violation")),
            other => panic!("{other:?}"),
        }
        assert!(validate_record(&rec(single.id(), &[], &[]), single).is_err());
        assert!(validate_record(&rec(single.id(), &["stereotyping"], &[]), single).is_err());
        assert!(validate_record(&rec(single.id(), &["economic-loss"], &["erasure"]), single).is_err());
        assert!(validate_record(&rec(single.id(), &["economic-loss", "economic-loss"], &[]), single).is_err());
        validate_record(&rec(group.id(), &[], &["erasure", "none"]), group).unwrap();
        validate_record(&rec(group.id(), &["economic-loss"], &[]), group).unwrap();
        assert!(validate_record(&rec(group.id(), &[], &[]), group).is_err());
        assert!(matches!(
            validate_record(&rec(group.id(), &["economic-loss"], &[]), single),
            Err(Error::RecordMismatch { .. })
        ));
    }

    #[test]
    fn assignment_is_seeded_and_logged() {
        let c = corpus("diagnosis");
        let mut store = AnnotationStore::in_memory("s");
        let a = assign_vignettes(&mut store, "ann-1", &c, 2, 42).unwrap();
        assert_eq!(a.len(), 2);
        assert_ne!(a[0], a[1]);
        assert_eq!(assign_vignettes(&mut store, "ann-1", &c, 2, 999).unwrap(), a);
        assert_eq!(draw_assignment("ann-1", &c, 2, 42).unwrap(), a);
        let all = draw_assignment("x", &c, 20, 1).unwrap();
        let mut sorted = all.clone();
        sorted.sort();
        let mut ids: Vec<String> = c.iter().map(|v| v.id().to_string()).collect();
        ids.sort();
        assert_eq!(sorted, ids);
        assert!(matches!(
            assign_vignettes(&mut store, "ann-2", &c, 21, 1),
            Err(Error::AssignmentTooLarge { .. })
        ));
    }

    #[test]
    fn assignment_is_uniform() {
        let c = corpus("diagnosis");
        let draws = 10_000;
        let mut freq = std::collections::HashMap::<String, usize>::new();
        for i in 0..draws {
            for id in draw_assignment(&format!("annotator-{i}"), &c, 2, 7).unwrap() {
                *freq.entry(id).or_default() += 1;
            }
        }
        let p = 2.0 / c.len() as f64;
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for v in &c {
            let f = freq[v.id()] as f64;
            assert!((f - mean).abs() <= 3.0 * sd, "{} drawn {f} times, mean {mean}", v.id());
        }
    }

    #[test]
    fn answer_parsing() {
        let c = corpus("hiring");
        let opts = &c[0].individual_options;
        assert_eq!(parse_answer("economic-loss", opts), ["economic-loss"]);
        assert_eq!(parse_answer("1. `Economic loss`\n- alienation: because", opts), ["economic-loss", "alienation"]);
        assert_eq!(parse_answer("opportunity-loss, privacy-violation", opts), ["opportunity-loss", "privacy-violation"]);
        assert!(parse_answer("I would rather not say", opts).is_empty());
    }

    #[test]
    fn llm_annotates_every_vignette() {
        let c = corpus("diagnosis");
        let t = DateTime::from_timestamp(1_700_000_000, 0).unwrap();
        let out = llm_annotate(&c, &MockProvider::new(5), t);
        assert!(out.failures.is_empty());
        assert_eq!(out.records.len(), 20);
        assert!(out.records.iter().all(|r| r.annotator_kind == AnnotatorKind::Llm && r.annotator_id == LLM_ANNOTATOR_ID));
        for (r, v) in out.records.iter().zip(&c) {
            validate_record(r, v).unwrap();
        }
        assert_eq!(llm_annotate(&c, &MockProvider::new(5), t), out);
    }

    #[test]
    fn llm_singleton_and_parse_failure() {
        let c = corpus("hiring");
        let t = DateTime::from_timestamp(0, 0).unwrap();
        let one = ScriptedProvider::new(["alienation"]);
        let out = llm_annotate(&c[..1], &one, t);
        assert_eq!(out.records[0].individual_harms, ["alienation"]);

        let junk = ScriptedProvider::new(["no idea"]);
        let out = llm_annotate(&c[..1], &junk, t);
        assert!(out.records.is_empty());
        assert_eq!(out.failures[0].kind, "answer-parse");
        // One retry, so two calls for the vignette.
        assert_eq!(junk.calls().len(), 2);
        assert_eq!(junk.calls()[0].0.temperature, 0.0);
    }
}
