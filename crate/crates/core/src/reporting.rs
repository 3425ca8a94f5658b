//! Report documents: matrices, test statistics, radar-plot data and the
//! comparison against reference values.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregation::{rounded_percent, DescriptiveEthicalMatrix};
use crate::error::{Error, Result};
use crate::fixtures::Fixture;
use crate::inference::{Analysis, ContingencyTable, HarmStatus, InferentialEthicalMatrix};
use crate::taxonomy::{Scope, StudyConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarPolygon {
    pub bias_id: String,
    /// One relative frequency per axis.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarSeries {
    pub domain: String,
    pub stakeholder_id: String,
    pub scope: Scope,
    pub axes: Vec<String>,
    pub series: Vec<RadarPolygon>,
}

/// Per-bias relative frequencies, axes ordered by overall frequency.
pub fn export_radar_data(table: &ContingencyTable) -> Result<RadarSeries> {
    let rows = table.row_totals();
    if table.n_votes == 0 || rows.contains(&0) {
        return Err(Error::DegenerateTable("radar data needs votes in every row".into()));
    }
    let cols = table.column_totals();
    let mut order: Vec<usize> = (0..table.columns.len()).collect();
    order.sort_by(|&a, &b| cols[b].cmp(&cols[a]));
    Ok(RadarSeries {
        domain: table.domain.clone(),
        stakeholder_id: table.stakeholder_id.clone(),
        scope: table.scope,
        axes: order.iter().map(|&j| table.columns[j].clone()).collect(),
        series: table
            .rows
            .iter()
            .zip(&table.counts)
            .zip(&rows)
            .map(|((b, r), &t)| RadarPolygon {
                bias_id: b.clone(),
                values: order.iter().map(|&j| r[j] as f64 / t as f64).collect(),
            })
            .collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmnibusDiscrepancy {
    pub stakeholder: String,
    pub printed_chi2: f64,
    pub chi2: f64,
    pub printed_dof: u32,
    pub dof: u32,
    pub printed_p: f64,
    pub p: f64,
    pub printed_v: f64,
    pub v: f64,
    pub printed_n: u64,
    pub n: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualDiscrepancy {
    pub stakeholder: String,
    pub bias: String,
    pub harm: String,
    pub printed_z: f64,
    pub z: Option<f64>,
    pub printed_p: f64,
    pub p: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemDiscrepancy {
    pub stakeholder: String,
    pub bias: String,
    pub printed: Vec<String>,
    pub computed: Vec<String>,
    pub n_annotators: u64,
    pub counts: Vec<(String, u64)>,
    pub rule: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjustedCell {
    pub stakeholder: String,
    pub bias: String,
    pub printed_annotators: u64,
    pub annotators: u64,
    pub votes: u64,
}

/// Differences between computed results and a fixture's reference values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Discrepancies {
    pub dem_cells_compared: usize,
    pub dem_cells_matching: usize,
    pub dem: Vec<DemDiscrepancy>,
    pub omnibus: Vec<OmnibusDiscrepancy>,
    pub residuals: Vec<ResidualDiscrepancy>,
    pub adjusted_cells: Vec<AdjustedCell>,
}

/// Tolerances used when comparing against printed (3-decimal) values.
pub const CHI2_TOL: f64 = 0.01;
pub const P_TOL: f64 = 0.001;
pub const V_TOL: f64 = 0.001;
pub const Z_TOL: f64 = 0.01;

fn same_set(a: &[String], b: &[String]) -> bool {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort();
    y.sort();
    x == y
}

pub fn compare_with_reference(dem: &DescriptiveEthicalMatrix, analysis: &Analysis, fixture: &Fixture) -> Discrepancies {
    let mut d = Discrepancies::default();
    for r in &fixture.reference.dem {
        d.dem_cells_compared += 1;
        let cell = dem.primary_cell(&r.stakeholder, &r.bias);
        let computed = cell.map(|c| c.retained.clone()).unwrap_or_default();
        if same_set(&computed, &r.retained) {
            d.dem_cells_matching += 1;
        } else {
            d.dem.push(DemDiscrepancy {
                stakeholder: r.stakeholder.clone(),
                bias: r.bias.clone(),
                printed: r.retained.clone(),
                computed,
                n_annotators: cell.map_or(0, |c| c.n_annotators),
                counts: cell.map_or(Vec::new(), |c| c.harms.iter().map(|h| (h.harm_id.clone(), h.count)).collect()),
                rule: cell.and_then(|c| c.rule_applied).map(|r| r.as_str().to_string()),
            });
        }
    }
    for r in &fixture.reference.omnibus {
        let Some(sa) = analysis.get(&r.stakeholder) else { continue };
        let o = &sa.omnibus;
        let off = (o.chi2 - r.chi2).abs() > CHI2_TOL
            || o.dof != r.dof
            || (o.p_value - r.p).abs() > P_TOL
            || (o.cramers_v - r.cramers_v).abs() > V_TOL
            || o.n_votes != r.n_votes;
        if off {
            d.omnibus.push(OmnibusDiscrepancy {
                stakeholder: r.stakeholder.clone(),
                printed_chi2: r.chi2,
                chi2: o.chi2,
                printed_dof: r.dof,
                dof: o.dof,
                printed_p: r.p,
                p: o.p_value,
                printed_v: r.cramers_v,
                v: o.cramers_v,
                printed_n: r.n_votes,
                n: o.n_votes,
            });
        }
    }
    for r in &fixture.reference.residuals {
        let cell = analysis
            .get(&r.stakeholder)
            .and_then(|sa| sa.residuals.iter().find(|c| c.bias_id == r.bias && c.harm_id == r.harm));
        let ok = cell.is_some_and(|c| (c.z - r.z).abs() <= Z_TOL && (c.p_two_sided - r.p).abs() <= P_TOL);
        if !ok {
            d.residuals.push(ResidualDiscrepancy {
                stakeholder: r.stakeholder.clone(),
                bias: r.bias.clone(),
                harm: r.harm.clone(),
                printed_z: r.z,
                z: cell.map(|c| c.z),
                printed_p: r.p,
                p: cell.map(|c| c.p_two_sided),
            });
        }
    }
    for c in &fixture.cells {
        if let Some(printed) = c.printed_annotators {
            d.adjusted_cells.push(AdjustedCell {
                stakeholder: c.stakeholder.clone(),
                bias: c.bias.clone(),
                printed_annotators: printed,
                annotators: c.annotators,
                votes: c.counts.values().sum(),
            });
        }
    }
    d
}

/// Everything a report is rendered from. All parts must share one store
/// snapshot.
pub struct ReportInputs<'a> {
    pub config: &'a StudyConfig,
    pub dem: &'a DescriptiveEthicalMatrix,
    pub iem: &'a InferentialEthicalMatrix,
    pub analysis: &'a Analysis,
    pub reference: Option<&'a Fixture>,
}

/// A rendered file, relative to the report directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub path: PathBuf,
    pub content: String,
}

fn doc(path: impl Into<PathBuf>, content: String) -> Document {
    Document {
        path: path.into(),
        content,
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report value serializes");
    s.push('\n');
    s
}

fn label<'a>(config: &'a StudyConfig, stakeholder: &'a str) -> &'a str {
    config.stakeholder(stakeholder).map_or(stakeholder, |s| s.label.as_str())
}

fn bias_label<'a>(config: &'a StudyConfig, bias: &'a str) -> &'a str {
    config.bias(bias).map_or(bias, |b| b.label.as_str())
}

fn harm(config: &StudyConfig, id: &str) -> String {
    config.harm_label(id).to_lowercase()
}

pub fn iem_markdown(iem: &InferentialEthicalMatrix, config: &StudyConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Inferential ethical matrix: {}\n", config.domain);
    out.push_str("Plain: confirmed (majority and significantly overrepresented). **Bold**: surfaced by the residual analysis. _Italic_: descriptive only.\n\n");
    let _ = writeln!(
        out,
        "| Stakeholder | {} |",
        iem.biases.iter().map(|b| bias_label(config, b)).collect::<Vec<_>>().join(" | ")
    );
    let _ = writeln!(out, "|---|{}", "---|".repeat(iem.biases.len()));
    for s in &iem.stakeholders {
        let cells: Vec<String> = iem
            .biases
            .iter()
            .map(|b| {
                let Some(c) = iem.cell(s, b) else { return "-".into() };
                if c.entries.is_empty() {
                    return "-".into();
                }
                c.entries
                    .iter()
                    .map(|e| {
                        let pct = if c.n_annotators == 0 { 0 } else { rounded_percent(e.count, c.n_annotators) };
                        let text = format!("{} ({pct}%)", harm(config, &e.harm_id));
                        match e.status {
                            HarmStatus::Confirmed => text,
                            HarmStatus::Surfaced => format!("**{text}**"),
                            HarmStatus::DescriptiveOnly => format!("_{text}_"),
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" / ")
            })
            .collect();
        let _ = writeln!(out, "| {} | {} |", label(config, s), cells.join(" | "));
    }
    out
}

pub fn omnibus_markdown(analysis: &Analysis, config: &StudyConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# χ² homogeneity tests: {}\n", config.domain);
    let _ = writeln!(out, "α = {}\n", analysis.alpha);
    out.push_str("| Stakeholder | n_bias | n_harms | n_votes | χ² | dof | p | Cramér's V | significant | cells E<5 |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for sa in &analysis.stakeholders {
        let o = &sa.omnibus;
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {:.3} | {} | {:.3} | {:.3} | {} | {} |",
            label(config, &o.stakeholder_id),
            o.n_bias,
            o.n_harms,
            o.n_votes,
            o.chi2,
            o.dof,
            o.p_value,
            o.cramers_v,
            if o.significant { "yes" } else { "no" },
            o.sparse_cells
        );
    }
    out
}

pub fn residuals_markdown(analysis: &Analysis, config: &StudyConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Overrepresented cells: {}\n", config.domain);
    let _ = writeln!(out, "Adjusted standardized residuals with z > {}; p is two-sided.\n", analysis.z_threshold);
    out.push_str("| Stakeholder | Omnibus p | Bias | Harm | Observed | Expected | z | p |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    for sa in &analysis.stakeholders {
        let mut cells: Vec<_> = sa.residuals.iter().filter(|r| r.overrepresented).collect();
        cells.sort_by(|a, b| b.z.total_cmp(&a.z));
        for r in cells {
            let _ = writeln!(
                out,
                "| {} | {:.3} | {} | {} | {} | {:.2} | {:.3} | {:.3} |",
                label(config, &sa.table.stakeholder_id),
                sa.omnibus.p_value,
                bias_label(config, &r.bias_id),
                harm(config, &r.harm_id),
                r.observed,
                r.expected,
                r.z,
                r.p_two_sided
            );
        }
    }
    out
}

pub fn discrepancies_markdown(d: Option<&Discrepancies>, config: &StudyConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Discrepancies against reference values: {}\n", config.domain);
    let Some(d) = d else {
        out.push_str("No reference values are bundled for this study.\n");
        return out;
    };
    let _ = writeln!(
        out,
        "Descriptive matrix agreement: {}/{} cells.\n",
        d.dem_cells_matching, d.dem_cells_compared
    );
    out.push_str("## Descriptive matrix cells\n\n");
    if d.dem.is_empty() {
        out.push_str("All compared cells match.\n\n");
    } else {
        out.push_str("| Stakeholder | Bias | Printed | Computed | N | Counts | Rule |\n|---|---|---|---|---|---|---|\n");
        for c in &d.dem {
            let counts = c.counts.iter().map(|(h, k)| format!("{h}:{k}")).collect::<Vec<_>>().join(", ");
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} | {} |",
                c.stakeholder,
                c.bias,
                c.printed.join(", "),
                c.computed.join(", "),
                c.n_annotators,
                counts,
                c.rule.as_deref().unwrap_or("-")
            );
        }
        out.push('\n');
    }
    out.push_str("## Omnibus tests\n\n");
    if d.omnibus.is_empty() {
        out.push_str("All rows within tolerance.\n\n");
    } else {
        out.push_str("| Stakeholder | χ² printed | χ² computed | dof | p printed | p computed | V printed | V computed | n printed | n computed |\n");
        out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
        for o in &d.omnibus {
            let _ = writeln!(
                out,
                "| {} | {:.3} | {:.3} | {}/{} | {:.3} | {:.4} | {:.3} | {:.3} | {} | {} |",
                o.stakeholder, o.printed_chi2, o.chi2, o.printed_dof, o.dof, o.printed_p, o.p, o.printed_v, o.v, o.printed_n, o.n
            );
        }
        out.push_str("\nWhere printed and computed vote totals differ, the computed value follows the per-cell counts.\n\n");
    }
    out.push_str("## Residuals\n\n");
    if d.residuals.is_empty() {
        out.push_str("All printed residuals reproduced.\n\n");
    } else {
        out.push_str("| Stakeholder | Bias | Harm | z printed | z computed | p printed | p computed |\n|---|---|---|---|---|---|---|\n");
        let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
        for r in &d.residuals {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {:.3} | {} | {:.3} | {} |",
                r.stakeholder,
                r.bias,
                r.harm,
                r.printed_z,
                opt(r.z, 3),
                r.printed_p,
                opt(r.p, 4)
            );
        }
        out.push('\n');
    }
    out.push_str("## Annotator counts adjusted in the fixtures\n\n");
    if d.adjusted_cells.is_empty() {
        out.push_str("None.\n");
    } else {
        out.push_str("These printed annotator counts cannot produce the printed votes with at most two selections each.\n\n");
        out.push_str("| Stakeholder | Bias | Printed N | Votes | N used |\n|---|---|---|---|---|\n");
        for c in &d.adjusted_cells {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                c.stakeholder, c.bias, c.printed_annotators, c.votes, c.annotators
            );
        }
    }
    out
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Parse(format!("csv write: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(format!("csv write: {e}")))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}

pub fn iem_csv(iem: &InferentialEthicalMatrix) -> Result<String> {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
    let rows = iem
        .cells
        .iter()
        .flat_map(|c| {
            c.entries.iter().map(move |e| {
                vec![
                    c.stakeholder_id.clone(),
                    c.bias_id.clone(),
                    e.harm_id.clone(),
                    e.status.as_str().to_string(),
                    opt(e.z),
                    opt(e.p),
                ]
            })
        })
        .collect();
    csv_text(&["stakeholder", "bias", "harm", "status", "z", "p"], rows)
}

fn dem_csv(dem: &DescriptiveEthicalMatrix) -> Result<String> {
    let rows = dem
        .individual
        .iter()
        .chain(&dem.representational)
        .flat_map(|c| {
            c.harms.iter().map(move |h| {
                vec![
                    c.stakeholder_id.clone(),
                    c.bias_id.clone(),
                    c.scope.as_str().to_string(),
                    h.harm_id.clone(),
                    h.count.to_string(),
                    c.n_annotators.to_string(),
                    format!("{:.6}", h.proportion),
                    c.retained.contains(&h.harm_id).to_string(),
                    c.rule_applied.map_or(String::new(), |r| r.as_str().to_string()),
                ]
            })
        })
        .collect();
    csv_text(
        &["stakeholder", "bias", "scope", "harm", "count", "n_annotators", "proportion", "retained", "rule"],
        rows,
    )
}

fn omnibus_csv(analysis: &Analysis) -> Result<String> {
    let rows = analysis
        .stakeholders
        .iter()
        .map(|sa| {
            let o = &sa.omnibus;
            vec![
                o.stakeholder_id.clone(),
                o.scope.as_str().to_string(),
                o.n_bias.to_string(),
                o.n_harms.to_string(),
                o.n_votes.to_string(),
                format!("{:.6}", o.chi2),
                o.dof.to_string(),
                format!("{:.6}", o.p_value),
                format!("{:.6}", o.cramers_v),
                o.significant.to_string(),
                o.sparse_cells.to_string(),
            ]
        })
        .collect();
    csv_text(
        &["stakeholder", "scope", "n_bias", "n_harms", "n_votes", "chi2", "dof", "p", "cramers_v", "significant", "sparse_cells"],
        rows,
    )
}

fn residuals_csv(analysis: &Analysis) -> Result<String> {
    let rows = analysis
        .stakeholders
        .iter()
        .flat_map(|sa| {
            sa.residuals.iter().map(move |r| {
                vec![
                    sa.table.stakeholder_id.clone(),
                    r.bias_id.clone(),
                    r.harm_id.clone(),
                    r.observed.to_string(),
                    format!("{:.6}", r.expected),
                    format!("{:.6}", r.z),
                    format!("{:.6}", r.p_two_sided),
                    r.overrepresented.to_string(),
                ]
            })
        })
        .collect();
    csv_text(
        &["stakeholder", "bias", "harm", "observed", "expected", "z", "p", "overrepresented"],
        rows,
    )
}

/// Renders the report documents. Output is a pure function of the inputs.
pub fn render_report(inputs: &ReportInputs, format: ReportFormat) -> Result<Vec<Document>> {
    let ReportInputs {
        config,
        dem,
        iem,
        analysis,
        reference,
    } = *inputs;
    if dem.snapshot_digest != analysis.snapshot_digest || iem.snapshot_digest != analysis.snapshot_digest {
        return Err(Error::SnapshotMismatch {
            expected: dem.snapshot_digest.clone(),
            found: analysis.snapshot_digest.clone(),
        });
    }
    let discrepancies = reference.map(|f| compare_with_reference(dem, analysis, f));
    let mut docs = match format {
        ReportFormat::Markdown => vec![
            doc("dem.md", dem.to_markdown(config)),
            doc("iem.md", iem_markdown(iem, config)),
            doc("omnibus.md", omnibus_markdown(analysis, config)),
            doc("residuals.md", residuals_markdown(analysis, config)),
        ],
        ReportFormat::Csv => vec![
            doc("dem.csv", dem_csv(dem)?),
            doc("iem.csv", iem_csv(iem)?),
            doc("omnibus.csv", omnibus_csv(analysis)?),
            doc("residuals.csv", residuals_csv(analysis)?),
        ],
        ReportFormat::Json => {
            let mut v = vec![
                doc("dem.json", dem.to_json()),
                doc("iem.json", iem.to_json()),
                doc("analysis.json", analysis.to_json()),
            ];
            if let Some(d) = &discrepancies {
                v.push(doc("discrepancies.json", pretty(d)));
            }
            v
        }
    };
    for sa in &analysis.stakeholders {
        let radar = export_radar_data(&sa.table)?;
        docs.push(doc(format!("radar/{}.json", sa.table.stakeholder_id), pretty(&radar)));
    }
    docs.push(doc("discrepancies.md", discrepancies_markdown(discrepancies.as_ref(), config)));
    Ok(docs)
}

pub fn write_documents(dir: &Path, docs: &[Document]) -> Result<()> {
    for d in docs {
        let path = dir.join(&d.path);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, &d.content).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
