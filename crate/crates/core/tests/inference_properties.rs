mod common;

use proptest::prelude::*;

use common::oracle::chi2_brute;
use common::synth::fixture_study;
use echo_core::aggregation::build_dem;
use echo_core::inference::{adjusted_residuals, analyze, build_iem, chi2_homogeneity, ContingencyTable, HarmStatus};
use echo_core::reporting::{export_radar_data, iem_csv, render_report, ReportFormat, ReportInputs};
use echo_core::taxonomy::Scope;
use echo_core::Error;

fn table(counts: Vec<Vec<u64>>) -> Result<ContingencyTable, Error> {
    let rows = (0..counts.len()).map(|i| format!("b{i}")).collect();
    let cols = (0..counts[0].len()).map(|j| format!("h{j}")).collect();
    ContingencyTable::new("d", "s", Scope::Individual, rows, cols, counts)
}

fn counts_strategy() -> impl Strategy<Value = Vec<Vec<u64>>> {
    (2usize..=6, 2usize..=10).prop_flat_map(|(r, c)| prop::collection::vec(prop::collection::vec(0u64..25, c), r))
}

/// χ² = n·(Σ O²/(R·C) − 1), an algebraically equivalent form.
fn chi2_shortcut(counts: &[Vec<u64>]) -> f64 {
    let rows: Vec<f64> = counts.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let cols: Vec<f64> = (0..counts[0].len()).map(|j| counts.iter().map(|r| r[j]).sum::<u64>() as f64).collect();
    let n: f64 = rows.iter().sum();
    let mut s = 0.0;
    for (i, r) in counts.iter().enumerate() {
        for (j, &o) in r.iter().enumerate() {
            if cols[j] > 0.0 {
                s += (o * o) as f64 / (rows[i] * cols[j]);
            }
        }
    }
    n * (s - 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn chi2_matches_both_oracles(counts in counts_strategy()) {
        let Ok(t) = table(counts.clone()) else { return Ok(()) };
        let Ok(o) = chi2_homogeneity(&t, 0.1) else { return Ok(()) };
        prop_assert!((o.chi2 - chi2_brute(&counts)).abs() <= 1e-9 * o.chi2.max(1.0));
        prop_assert!((o.chi2 - chi2_shortcut(&counts)).abs() <= 1e-9 * o.chi2.max(1.0));
        prop_assert!((0.0..=1.0).contains(&o.cramers_v));
        prop_assert!((0.0..=1.0).contains(&o.p_value));
        prop_assert_eq!(o.dof as usize, (t.rows.len() - 1) * (t.columns.len() - 1));
    }

    #[test]
    fn row_permutation_leaves_statistics(counts in counts_strategy(), shift in 1usize..6) {
        let Ok(t) = table(counts.clone()) else { return Ok(()) };
        let Ok(a) = chi2_homogeneity(&t, 0.1) else { return Ok(()) };
        let mut rotated = counts;
        let k = shift % rotated.len();
        rotated.rotate_left(k);
        let b = chi2_homogeneity(&table(rotated).unwrap(), 0.1).unwrap();
        prop_assert!((a.chi2 - b.chi2).abs() < 1e-9);
        prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
        prop_assert!((a.cramers_v - b.cramers_v).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_residuals_share_magnitude(a in 1u64..30, b in 0u64..30, c in 0u64..30, d in 1u64..30) {
        let Ok(t) = table(vec![vec![a, b], vec![c, d]]) else { return Ok(()) };
        let Ok(res) = adjusted_residuals(&t, 1.64) else { return Ok(()) };
        for r in &res {
            prop_assert!((r.z.abs() - res[0].z.abs()).abs() < 1e-9);
        }
        // Squared 2×2 residual equals the Pearson statistic.
        let o = chi2_homogeneity(&t, 0.1).unwrap();
        prop_assert!((res[0].z * res[0].z - o.chi2).abs() < 1e-9 * o.chi2.max(1.0));
    }

    #[test]
    fn residuals_balance(counts in counts_strategy()) {
        let Ok(t) = table(counts) else { return Ok(()) };
        let Ok(res) = adjusted_residuals(&t, 1.64) else { return Ok(()) };
        for row in &t.rows {
            let s: f64 = res.iter().filter(|r| &r.bias_id == row).map(|r| r.observed as f64 - r.expected).sum();
            prop_assert!(s.abs() < 1e-9);
        }
        for col in &t.columns {
            let s: f64 = res.iter().filter(|r| &r.harm_id == col).map(|r| r.observed as f64 - r.expected).sum();
            prop_assert!(s.abs() < 1e-9);
        }
    }
}

#[test]
fn degenerate_tables_rejected() {
    assert!(matches!(chi2_homogeneity(&table(vec![vec![3, 4]]).unwrap(), 0.1), Err(Error::DegenerateTable(_))));
    assert!(matches!(chi2_homogeneity(&table(vec![vec![3, 0], vec![2, 0]]).unwrap(), 0.1), Err(Error::DegenerateTable(_))));
    assert!(matches!(table(vec![vec![0, 0], vec![2, 1]]), Err(Error::CoverageGap(_))));
}

#[test]
fn iem_status_partition_and_examples() {
    for name in ["diagnosis", "hiring"] {
        let l = fixture_study(name);
        let dem = build_dem(&l.store, &l.corpus, &l.config).unwrap();
        let analysis = analyze(&l.store, &l.corpus, &l.config).unwrap();
        let iem = build_iem(&dem, &analysis, &l.config).unwrap();
        for cell in &iem.cells {
            let sig = iem.significant_stakeholders.contains(&cell.stakeholder_id);
            let retained = &dem.primary_cell(&cell.stakeholder_id, &cell.bias_id).unwrap().retained;
            let mut seen = std::collections::HashSet::new();
            for e in &cell.entries {
                assert!(seen.insert(&e.harm_id), "harm listed twice");
                assert_ne!(e.harm_id, "none");
                let over = analysis
                    .get(&cell.stakeholder_id)
                    .unwrap()
                    .residuals
                    .iter()
                    .any(|r| r.bias_id == cell.bias_id && r.harm_id == e.harm_id && r.overrepresented);
                let expected = match (retained.contains(&e.harm_id), sig && over) {
                    (true, true) => HarmStatus::Confirmed,
                    (false, true) => HarmStatus::Surfaced,
                    (true, false) => HarmStatus::DescriptiveOnly,
                    (false, false) => panic!("{} should not be listed", e.harm_id),
                };
                assert_eq!(e.status, expected, "{name}/{}/{}/{}", cell.stakeholder_id, cell.bias_id, e.harm_id);
            }
            for h in retained {
                assert!(seen.contains(h), "retained harm {h} missing from iEM");
            }
        }
        let csv = iem_csv(&iem).unwrap();
        assert_eq!(csv.lines().count() - 1, iem.entry_count());

        if name == "diagnosis" {
            for s in ["developer", "healthcare-institution"] {
                assert!(iem
                    .cells
                    .iter()
                    .filter(|c| c.stakeholder_id == s)
                    .flat_map(|c| &c.entries)
                    .all(|e| e.status == HarmStatus::DescriptiveOnly));
            }
            assert_eq!(iem.status("patient", "evaluation", "service-or-benefit-loss"), Some(HarmStatus::Confirmed));
            let radar = export_radar_data(&analysis.get("patient").unwrap().table).unwrap();
            assert_eq!(radar.axes[0], "diminished-health-and-well-being");
        } else {
            assert_eq!(iem.status("applicant", "evaluation", "economic-loss"), Some(HarmStatus::Surfaced));
            let radar = export_radar_data(&analysis.get("applicant").unwrap().table).unwrap();
            let peak = |bias: &str| {
                let p = radar.series.iter().find(|p| p.bias_id == bias).unwrap();
                let max = p.values.iter().cloned().fold(f64::MIN, f64::max);
                radar.axes[p.values.iter().position(|v| *v == max).unwrap()].clone()
            };
            for b in ["representation", "measurement", "evaluation"] {
                assert_eq!(peak(b), "opportunity-loss", "{b}");
            }
        }
    }
}

#[test]
fn report_rendering_is_deterministic_and_round_trips() {
    let l = fixture_study("hiring");
    let dem = build_dem(&l.store, &l.corpus, &l.config).unwrap();
    let analysis = analyze(&l.store, &l.corpus, &l.config).unwrap();
    let iem = build_iem(&dem, &analysis, &l.config).unwrap();
    let inputs = ReportInputs {
        config: &l.config,
        dem: &dem,
        iem: &iem,
        analysis: &analysis,
        reference: None,
    };
    for format in [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json] {
        assert_eq!(render_report(&inputs, format).unwrap(), render_report(&inputs, format).unwrap());
    }
    let json = render_report(&inputs, ReportFormat::Json).unwrap();
    let get = |p: &str| &json.iter().find(|d| d.path.to_str() == Some(p)).unwrap().content;
    assert_eq!(echo_core::aggregation::DescriptiveEthicalMatrix::from_json(get("dem.json")).unwrap(), dem);
    assert_eq!(echo_core::inference::InferentialEthicalMatrix::from_json(get("iem.json")).unwrap(), iem);
    assert_eq!(echo_core::inference::Analysis::from_json(get("analysis.json")).unwrap(), analysis);

    let md = render_report(&inputs, ReportFormat::Markdown).unwrap();
    let iem_md = &md.iter().find(|d| d.path.to_str() == Some("iem.md")).unwrap().content;
    assert!(iem_md.contains("**economic loss ("));
    let residuals = &md.iter().find(|d| d.path.to_str() == Some("residuals.md")).unwrap().content;
    let applicant_z: Vec<f64> = residuals
        .lines()
        .filter(|l| l.starts_with("| Applicant |"))
        .map(|l| l.split('|').nth(7).unwrap().trim().parse().unwrap())
        .collect();
    assert_eq!(applicant_z.len(), 7);
    assert!(applicant_z.windows(2).all(|w| w[0] >= w[1]));

    let mut other = dem.clone();
    other.snapshot_digest = "0".repeat(64);
    let stale = ReportInputs { dem: &other, ..inputs };
    assert!(matches!(render_report(&stale, ReportFormat::Markdown), Err(Error::SnapshotMismatch { .. })));
}
