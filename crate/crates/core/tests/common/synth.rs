//! Synthetic studies, records and tables for integration tests.

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::Rng;

use echo_core::annotation::{AnnotationRecord, AnnotationStore, AnnotatorKind};
use echo_core::fixtures::bundled_fixture;
use echo_core::genai::MockProvider;
use echo_core::taxonomy::{bundled_study, StudyConfig};
use echo_core::vignette::{build_corpus, AugmentedVignette, McqOption, Overrides};

pub struct Loaded {
    pub config: StudyConfig,
    pub corpus: Vec<AugmentedVignette>,
    pub store: AnnotationStore,
}

pub fn corpus(name: &str, seed: u64) -> (StudyConfig, Vec<AugmentedVignette>) {
    let config = bundled_study(name).unwrap();
    let build = build_corpus(&config, &MockProvider::new(seed), &Overrides::new(), seed).unwrap();
    assert!(build.is_complete(), "{:?}", build.failures);
    (config, build.vignettes)
}

/// A bundled study with its fixture annotations in an in-memory store.
pub fn fixture_study(name: &str) -> Loaded {
    let (config, corpus) = corpus(name, 11);
    let mut store = AnnotationStore::in_memory(&config.study_id);
    bundled_fixture(name).unwrap().load_into(&mut store, &corpus).unwrap();
    Loaded { config, corpus, store }
}

fn pick(rng: &mut impl Rng, opts: &[McqOption], lo: usize, hi: usize) -> Vec<String> {
    let k = rng.random_range(lo..=hi);
    opts.choose_multiple(rng, k).map(|o| o.id.clone()).collect()
}

/// A valid record for a random vignette.
pub fn random_record(rng: &mut impl Rng, corpus: &[AugmentedVignette], annotator: String) -> AnnotationRecord {
    let v = corpus.choose(rng).unwrap();
    let max = v.max_selections;
    let (individual, representational) = match &v.representational_options {
        None => (pick(rng, &v.individual_options, 1, max), Vec::new()),
        Some(rep) => (pick(rng, &v.individual_options, 0, max), pick(rng, rep, 1, max)),
    };
    let secs = rng.random_range(1_600_000_000i64..1_900_000_000);
    let nanos = rng.random_range(0..1_000_000_000u32);
    let at: DateTime<Utc> = Utc.timestamp_opt(secs, nanos).unwrap();
    AnnotationRecord {
        annotator_id: annotator,
        annotator_kind: if rng.random_bool(0.1) { AnnotatorKind::Llm } else { AnnotatorKind::Human },
        vignette_id: v.id().to_string(),
        individual_harms: individual,
        representational_harms: representational,
        submitted_at: at,
    }
}

/// Random r × c count table with every row non-empty and at least two
/// non-empty columns.
pub fn random_table(rng: &mut impl Rng, max_rows: usize, max_cols: usize) -> Vec<Vec<u64>> {
    loop {
        let r = rng.random_range(2..=max_rows);
        let c = rng.random_range(2..=max_cols);
        let t: Vec<Vec<u64>> = (0..r)
            .map(|_| (0..c).map(|_| if rng.random_bool(0.25) { 0 } else { rng.random_range(0..20) }).collect())
            .collect();
        let rows_ok = t.iter().all(|row| row.iter().sum::<u64>() > 0);
        let live_cols = (0..c).filter(|&j| t.iter().any(|row| row[j] > 0)).count();
        if rows_ok && live_cols >= 2 {
            return t;
        }
    }
}
