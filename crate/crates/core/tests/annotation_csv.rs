mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::synth::{corpus, random_record};
use echo_core::annotation::{import_csv_text, parse_csv, records_to_csv, AnnotationStore, CSV_HEADER};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn export_import_is_lossless(seed in any::<u64>(), n in 1usize..200) {
        let (_, corpus) = corpus("diagnosis", 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records: Vec<_> = (0..n).map(|i| random_record(&mut rng, &corpus, format!("p{i}"))).collect();
        let text = records_to_csv(&records).unwrap();
        prop_assert_eq!(text.lines().count(), n + 1);
        let back = import_csv_text(&text, &corpus).unwrap();
        prop_assert!(back.rejected.is_empty());
        let got: Vec<_> = back.accepted.into_iter().map(|(_, r)| r).collect();
        prop_assert_eq!(got, records);
    }
}

#[test]
fn malformed_rows_get_diagnostics() {
    let (_, corpus) = corpus("diagnosis", 2);
    let text = format!(
        "{}\n\
         a,human,diagnosis.patient.evaluation,opportunity-loss,,,,2025-01-01T00:00:00Z\n\
         b,human,diagnosis.patient.evaluation,opportunity-loss\n\
         c,robot,diagnosis.patient.evaluation,opportunity-loss,,,,2025-01-01T00:00:00Z\n\
         d,human,diagnosis.nobody.evaluation,opportunity-loss,,,,2025-01-01T00:00:00Z\n\
         e,human,diagnosis.patient.evaluation,opportunity-loss,,,,yesterday\n\
         a,human,diagnosis.patient.evaluation,alienation,,,,2025-01-01T00:00:00Z\n\
         f,human,diagnosis.patient.evaluation,,,,,2025-01-01T00:00:00Z\n",
        CSV_HEADER.join(",")
    );
    let out = import_csv_text(&text, &corpus).unwrap();
    assert_eq!(out.accepted.len(), 1);
    let kinds: Vec<(usize, &str)> = out.rejected.iter().map(|d| (d.row, d.kind.as_str())).collect();
    assert_eq!(
        kinds,
        [(3, "parse"), (4, "parse"), (5, "unknown-id"), (6, "parse"), (7, "duplicate-annotation"), (8, "selection")]
    );
    assert_eq!(parse_csv(&text).unwrap().len(), 7);
}

#[test]
fn store_reimport_is_idempotent() {
    let (config, corpus) = corpus("hiring", 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let records: Vec<_> = (0..50).map(|i| random_record(&mut rng, &corpus, format!("q{i}"))).collect();
    let text = records_to_csv(&records).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    {
        let mut store = AnnotationStore::open(tmp.path(), &config.study_id, &corpus).unwrap();
        let s = store.import_text(&text, &corpus).unwrap();
        assert_eq!((s.accepted, s.skipped), (50, false));
    }
    let mut store = AnnotationStore::open(tmp.path(), &config.study_id, &corpus).unwrap();
    assert_eq!(store.len(), 50);
    let digest = store.snapshot_digest();
    let s = store.import_text(&text, &corpus).unwrap();
    assert!(s.skipped);
    assert_eq!(store.snapshot_digest(), digest);
    assert_eq!(records_to_csv(store.records()).unwrap(), text);
}
