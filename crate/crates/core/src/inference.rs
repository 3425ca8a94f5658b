//! Bias × harm contingency tables, χ² homogeneity tests, adjusted
//! standardized residuals and the inferential ethical matrix.

use serde::{Deserialize, Serialize};

use crate::aggregation::DescriptiveEthicalMatrix;
use crate::annotation::AnnotationStore;
use crate::error::{Error, Result};
use crate::stats::{chi2_survival, two_sided_normal_p};
use crate::taxonomy::{Scope, StudyConfig};
use crate::vignette::{vignette_id, AugmentedVignette};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub domain: String,
    pub stakeholder_id: String,
    pub scope: Scope,
    /// Bias ids.
    pub rows: Vec<String>,
    /// Harm ids with at least one vote.
    pub columns: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub n_votes: u64,
}

impl ContingencyTable {
    /// Builds a table, dropping all-zero columns. Every row needs a vote.
    pub fn new(
        domain: &str,
        stakeholder_id: &str,
        scope: Scope,
        rows: Vec<String>,
        columns: Vec<String>,
        counts: Vec<Vec<u64>>,
    ) -> Result<Self> {
        if counts.len() != rows.len() || counts.iter().any(|r| r.len() != columns.len()) {
            return Err(Error::invalid("contingency table", "counts do not match row/column labels"));
        }
        if let Some(i) = counts.iter().position(|r| r.iter().sum::<u64>() == 0) {
            return Err(Error::CoverageGap(vec![format!("{stakeholder_id} × {} has no votes", rows[i])]));
        }
        let keep: Vec<usize> = (0..columns.len()).filter(|&j| counts.iter().any(|r| r[j] > 0)).collect();
        let columns = keep.iter().map(|&j| columns[j].clone()).collect();
        let counts: Vec<Vec<u64>> = counts.iter().map(|r| keep.iter().map(|&j| r[j]).collect()).collect();
        let n_votes = counts.iter().flatten().sum();
        Ok(ContingencyTable {
            domain: domain.to_string(),
            stakeholder_id: stakeholder_id.to_string(),
            scope,
            rows,
            columns,
            counts,
            n_votes,
        })
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn column_totals(&self) -> Vec<u64> {
        (0..self.columns.len()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    pub fn expected(&self, i: usize, j: usize) -> f64 {
        let rows = self.row_totals();
        let cols = self.column_totals();
        rows[i] as f64 * cols[j] as f64 / self.n_votes as f64
    }

    fn check_testable(&self) -> Result<()> {
        if self.n_votes == 0 {
            return Err(Error::DegenerateTable("no votes".into()));
        }
        if self.rows.len() < 2 || self.columns.len() < 2 {
            return Err(Error::DegenerateTable(format!(
                "{} × {} table has no degrees of freedom",
                self.rows.len(),
                self.columns.len()
            )));
        }
        if self.row_totals().contains(&0) || self.column_totals().contains(&0) {
            return Err(Error::DegenerateTable("a row or column total is zero".into()));
        }
        Ok(())
    }
}

/// Votes per (bias, harm) for one stakeholder's `scope` question.
pub fn build_table(
    store: &AnnotationStore,
    corpus: &[AugmentedVignette],
    config: &StudyConfig,
    stakeholder_id: &str,
    scope: Scope,
) -> Result<ContingencyTable> {
    if config.stakeholder(stakeholder_id).is_none() {
        return Err(Error::Unknown {
            kind: "stakeholder",
            id: stakeholder_id.to_string(),
        });
    }
    let columns: Vec<String> = config.harms(scope).iter().map(|h| h.id.clone()).collect();
    let mut counts = Vec::new();
    let mut missing = Vec::new();
    for b in &config.biases {
        let vid = vignette_id(&config.domain, stakeholder_id, &b.id);
        if !corpus.iter().any(|v| v.id() == vid) {
            missing.push(vid);
            continue;
        }
        let mut row = vec![0u64; columns.len()];
        for r in store.records_for(&vid) {
            for h in r.harms(scope) {
                let j = columns.iter().position(|c| c == h).ok_or_else(|| Error::Unknown {
                    kind: "harm",
                    id: h.clone(),
                })?;
                row[j] += 1;
            }
        }
        if row.iter().sum::<u64>() == 0 {
            missing.push(vid);
        }
        counts.push(row);
    }
    if !missing.is_empty() {
        return Err(Error::CoverageGap(missing));
    }
    ContingencyTable::new(
        &config.domain,
        stakeholder_id,
        scope,
        config.biases.iter().map(|b| b.id.clone()).collect(),
        columns,
        counts,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmnibusResult {
    pub stakeholder_id: String,
    pub scope: Scope,
    pub n_bias: usize,
    pub n_harms: usize,
    pub n_votes: u64,
    pub chi2: f64,
    pub dof: u32,
    pub p_value: f64,
    pub cramers_v: f64,
    pub significant: bool,
    /// Cells with expected count below 5.
    pub sparse_cells: usize,
}

/// Pearson χ² test that all bias rows share one harm distribution.
pub fn chi2_homogeneity(table: &ContingencyTable, alpha: f64) -> Result<OmnibusResult> {
    table.check_testable()?;
    let rows = table.row_totals();
    let cols = table.column_totals();
    let n = table.n_votes as f64;
    let mut chi2 = 0.0;
    let mut sparse = 0;
    for (i, r) in table.counts.iter().enumerate() {
        for (j, &o) in r.iter().enumerate() {
            let e = rows[i] as f64 * cols[j] as f64 / n;
            if e < 5.0 {
                sparse += 1;
            }
            chi2 += (o as f64 - e).powi(2) / e;
        }
    }
    let (r, c) = (table.rows.len(), table.columns.len());
    let dof = ((r - 1) * (c - 1)) as u32;
    let p_value = chi2_survival(chi2, dof)?;
    let k = (r - 1).min(c - 1) as f64;
    let cramers_v = (chi2 / (n * k)).sqrt().min(1.0);
    Ok(OmnibusResult {
        stakeholder_id: table.stakeholder_id.clone(),
        scope: table.scope,
        n_bias: r,
        n_harms: c,
        n_votes: table.n_votes,
        chi2,
        dof,
        p_value,
        cramers_v,
        significant: p_value < alpha,
        sparse_cells: sparse,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualCell {
    pub bias_id: String,
    pub harm_id: String,
    pub observed: u64,
    pub expected: f64,
    pub z: f64,
    pub p_two_sided: f64,
    pub overrepresented: bool,
}

/// Adjusted standardized residual of every cell, row-major.
pub fn adjusted_residuals(table: &ContingencyTable, z_threshold: f64) -> Result<Vec<ResidualCell>> {
    table.check_testable()?;
    let rows = table.row_totals();
    let cols = table.column_totals();
    let n = table.n_votes as f64;
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for (i, r) in table.counts.iter().enumerate() {
        for (j, &o) in r.iter().enumerate() {
            let (rt, ct) = (rows[i] as f64, cols[j] as f64);
            let e = rt * ct / n;
            let var = e * (1.0 - rt / n) * (1.0 - ct / n);
            if var <= 0.0 {
                return Err(Error::DegenerateTable(format!(
                    "zero residual variance at ({}, {})",
                    table.rows[i], table.columns[j]
                )));
            }
            let z = (o as f64 - e) / var.sqrt();
            out.push(ResidualCell {
                bias_id: table.rows[i].clone(),
                harm_id: table.columns[j].clone(),
                observed: o,
                expected: e,
                z,
                p_two_sided: two_sided_normal_p(z),
                overrepresented: z > z_threshold,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StakeholderAnalysis {
    pub table: ContingencyTable,
    pub omnibus: OmnibusResult,
    pub residuals: Vec<ResidualCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub study_id: String,
    pub domain: String,
    pub snapshot_digest: String,
    pub alpha: f64,
    pub z_threshold: f64,
    pub stakeholders: Vec<StakeholderAnalysis>,
}

impl Analysis {
    pub fn get(&self, stakeholder_id: &str) -> Option<&StakeholderAnalysis> {
        self.stakeholders.iter().find(|s| s.table.stakeholder_id == stakeholder_id)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("analysis serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("analysis: {e}")))
    }
}

/// Tests every stakeholder on its primary scope: representational for
/// group stakeholders, individual otherwise.
pub fn analyze(store: &AnnotationStore, corpus: &[AugmentedVignette], config: &StudyConfig) -> Result<Analysis> {
    let p = &config.params;
    let stakeholders = config
        .stakeholders
        .iter()
        .map(|s| {
            let table = build_table(store, corpus, config, &s.id, s.primary_scope())?;
            let omnibus = chi2_homogeneity(&table, p.alpha_omnibus)?;
            let residuals = adjusted_residuals(&table, p.z_threshold)?;
            Ok(StakeholderAnalysis {
                table,
                omnibus,
                residuals,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Analysis {
        study_id: config.study_id.clone(),
        domain: config.domain.clone(),
        snapshot_digest: store.snapshot_digest(),
        alpha: p.alpha_omnibus,
        z_threshold: p.z_threshold,
        stakeholders,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HarmStatus {
    /// In the dEM cell and significantly overrepresented.
    Confirmed,
    /// Significantly overrepresented but not in the dEM cell.
    Surfaced,
    /// In the dEM cell without significant support.
    DescriptiveOnly,
}

impl HarmStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            HarmStatus::Confirmed => "confirmed",
            HarmStatus::Surfaced => "surfaced",
            HarmStatus::DescriptiveOnly => "descriptive-only",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IemEntry {
    pub harm_id: String,
    pub status: HarmStatus,
    pub count: u64,
    pub proportion: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IemCell {
    pub stakeholder_id: String,
    pub bias_id: String,
    pub scope: Scope,
    pub n_annotators: u64,
    pub entries: Vec<IemEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferentialEthicalMatrix {
    pub study_id: String,
    pub domain: String,
    pub snapshot_digest: String,
    pub stakeholders: Vec<String>,
    pub biases: Vec<String>,
    /// Stakeholder ids whose omnibus test is significant.
    pub significant_stakeholders: Vec<String>,
    /// Stakeholder-major grid.
    pub cells: Vec<IemCell>,
}

impl InferentialEthicalMatrix {
    pub fn cell(&self, stakeholder_id: &str, bias_id: &str) -> Option<&IemCell> {
        self.cells.iter().find(|c| c.stakeholder_id == stakeholder_id && c.bias_id == bias_id)
    }

    pub fn status(&self, stakeholder_id: &str, bias_id: &str, harm_id: &str) -> Option<HarmStatus> {
        self.cell(stakeholder_id, bias_id)?
            .entries
            .iter()
            .find(|e| e.harm_id == harm_id)
            .map(|e| e.status)
    }

    pub fn entry_count(&self) -> usize {
        self.cells.iter().map(|c| c.entries.len()).sum()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("iEM serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("iEM: {e}")))
    }
}

/// Refines the dEM with the analysis. Both must come from the same store
/// snapshot. The none option is never surfaced.
pub fn build_iem(dem: &DescriptiveEthicalMatrix, analysis: &Analysis, config: &StudyConfig) -> Result<InferentialEthicalMatrix> {
    if dem.snapshot_digest != analysis.snapshot_digest {
        return Err(Error::SnapshotMismatch {
            expected: dem.snapshot_digest.clone(),
            found: analysis.snapshot_digest.clone(),
        });
    }
    let mut iem = InferentialEthicalMatrix {
        study_id: dem.study_id.clone(),
        domain: dem.domain.clone(),
        snapshot_digest: dem.snapshot_digest.clone(),
        stakeholders: dem.stakeholders.clone(),
        biases: dem.biases.clone(),
        significant_stakeholders: Vec::new(),
        cells: Vec::new(),
    };
    for s in &dem.stakeholders {
        let sa = analysis.get(s).ok_or_else(|| Error::Unknown {
            kind: "stakeholder analysis",
            id: s.clone(),
        })?;
        let significant = sa.omnibus.significant;
        if significant {
            iem.significant_stakeholders.push(s.clone());
        }
        for b in &dem.biases {
            let cell = dem.cell(s, b, sa.table.scope).ok_or_else(|| Error::CoverageGap(vec![format!("{s} × {b}")]))?;
            let residual = |h: &str| sa.residuals.iter().find(|r| r.bias_id == *b && r.harm_id == h);
            let flagged = |h: &str| significant && residual(h).is_some_and(|r| r.overrepresented);
            let entry = |h: &str, status| {
                let count = cell.count(h);
                IemEntry {
                    harm_id: h.to_string(),
                    status,
                    count,
                    proportion: if cell.n_annotators == 0 { 0.0 } else { count as f64 / cell.n_annotators as f64 },
                    z: residual(h).map(|r| r.z),
                    p: residual(h).map(|r| r.p_two_sided),
                }
            };
            let mut entries: Vec<IemEntry> = cell
                .retained
                .iter()
                .map(|h| entry(h, if flagged(h) { HarmStatus::Confirmed } else { HarmStatus::DescriptiveOnly }))
                .collect();
            let mut surfaced: Vec<&crate::inference::ResidualCell> = if significant {
                sa.residuals
                    .iter()
                    .filter(|r| {
                        r.bias_id == *b && r.overrepresented && !cell.retained.contains(&r.harm_id) && !config.is_none_harm(&r.harm_id)
                    })
                    .collect()
            } else {
                Vec::new()
            };
            surfaced.sort_by(|x, y| y.z.total_cmp(&x.z));
            entries.extend(surfaced.iter().map(|r| entry(&r.harm_id, HarmStatus::Surfaced)));
            iem.cells.push(IemCell {
                stakeholder_id: s.clone(),
                bias_id: b.clone(),
                scope: sa.table.scope,
                n_annotators: cell.n_annotators,
                entries,
            });
        }
    }
    Ok(iem)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(counts: Vec<Vec<u64>>) -> ContingencyTable {
        let rows = (0..counts.len()).map(|i| format!("b{i}")).collect();
        let cols = (0..counts[0].len()).map(|j| format!("h{j}")).collect();
        ContingencyTable::new("d", "s", Scope::Individual, rows, cols, counts).unwrap()
    }

    #[test]
    fn homogeneous_rows() {
        let t = table(vec![vec![3, 3, 3]; 4]);
        let o = chi2_homogeneity(&t, 0.1).unwrap();
        assert_eq!(o.chi2, 0.0);
        assert_eq!(o.p_value, 1.0);
        assert_eq!(o.cramers_v, 0.0);
        assert_eq!(o.dof, 6);
        assert!(!o.significant);
    }

    #[test]
    fn diagonal_two_by_two() {
        // Marginals 10/10 and 10/10, n = 20: E = 5, variance 5 · ½ · ½.
        let t = table(vec![vec![10, 0], vec![0, 10]]);
        let res = adjusted_residuals(&t, 1.64).unwrap();
        let expect = 5.0 / (5.0f64 * 0.25).sqrt();
        let signs = [1.0, -1.0, -1.0, 1.0];
        for (r, s) in res.iter().zip(signs) {
            assert!((r.z - s * expect).abs() < 1e-12);
            assert_eq!(r.expected, 5.0);
        }
        assert!(res[0].overrepresented && !res[1].overrepresented);
        let o = chi2_homogeneity(&t, 0.1).unwrap();
        assert!((o.chi2 - 20.0).abs() < 1e-12);
        assert!((o.cramers_v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_columns_dropped_and_degenerate_cases() {
        let t = table(vec![vec![1, 0, 2], vec![2, 0, 1]]);
        assert_eq!(t.columns, ["h0", "h2"]);
        assert_eq!(chi2_homogeneity(&t, 0.1).unwrap().dof, 1);
        let single = ContingencyTable::new("d", "s", Scope::Individual, vec!["b".into()], vec!["h".into(), "g".into()], vec![vec![1, 0]]).unwrap();
        assert_eq!(single.columns.len(), 1);
        assert!(matches!(chi2_homogeneity(&single, 0.1), Err(Error::DegenerateTable(_))));
        assert!(matches!(adjusted_residuals(&single, 1.64), Err(Error::DegenerateTable(_))));
        let empty_row = ContingencyTable::new("d", "s", Scope::Individual, vec!["a".into(), "b".into()], vec!["h".into()], vec![vec![1], vec![0]]);
        assert!(matches!(empty_row, Err(Error::CoverageGap(_))));
    }
}
