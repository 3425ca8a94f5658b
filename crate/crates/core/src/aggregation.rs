//! Consensus aggregation of annotations into the descriptive ethical matrix.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationRecord, AnnotationStore};
use crate::error::{Error, Result};
use crate::taxonomy::{Params, Scope, StudyConfig};
use crate::vignette::{vignette_id, AugmentedVignette};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarmCount {
    pub harm_id: String,
    pub count: u64,
}

/// Votes for one vignette and one question.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTally {
    pub vignette_id: String,
    pub scope: Scope,
    /// Distinct annotators who answered this question.
    pub n_annotators: u64,
    /// One entry per option, in option order, zeros included.
    pub counts: Vec<HarmCount>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub none_option: Option<String>,
    pub max_selections: usize,
}

impl VoteTally {
    /// Builds a tally directly from counts, mainly for tests and tooling.
    pub fn from_counts(
        vignette_id: &str,
        scope: Scope,
        n_annotators: u64,
        counts: &[(&str, u64)],
        none_option: Option<&str>,
        max_selections: usize,
    ) -> Result<Self> {
        let t = VoteTally {
            vignette_id: vignette_id.to_string(),
            scope,
            n_annotators,
            counts: counts
                .iter()
                .map(|(h, c)| HarmCount {
                    harm_id: h.to_string(),
                    count: *c,
                })
                .collect(),
            none_option: none_option.map(str::to_string),
            max_selections,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_annotators == 0 {
            return Err(Error::EmptyTally(self.vignette_id.clone()));
        }
        let total: u64 = self.counts.iter().map(|c| c.count).sum();
        if total > self.max_selections as u64 * self.n_annotators {
            return Err(Error::invalid(
                format!("tally {}", self.vignette_id),
                format!("{total} votes exceed {} selections x {} annotators", self.max_selections, self.n_annotators),
            ));
        }
        if let Some(c) = self.counts.iter().find(|c| c.count > self.n_annotators) {
            return Err(Error::invalid(
                format!("tally {}", self.vignette_id),
                format!("harm `{}` has more votes than annotators", c.harm_id),
            ));
        }
        Ok(())
    }

    pub fn total_votes(&self) -> u64 {
        self.counts.iter().map(|c| c.count).sum()
    }

    pub fn count(&self, harm_id: &str) -> u64 {
        self.counts.iter().find(|c| c.harm_id == harm_id).map_or(0, |c| c.count)
    }
}

/// Counts votes for `scope` on `vignette`. Annotators who left this question
/// empty are not counted in N.
pub fn tally<'a>(
    records: impl IntoIterator<Item = &'a AnnotationRecord>,
    vignette: &AugmentedVignette,
    scope: Scope,
) -> Result<VoteTally> {
    let options = vignette.options(scope);
    let mut counts: Vec<HarmCount> = options
        .iter()
        .map(|o| HarmCount {
            harm_id: o.id.clone(),
            count: 0,
        })
        .collect();
    let mut annotators = HashSet::new();
    for r in records {
        if r.vignette_id != vignette.id() {
            return Err(Error::RecordMismatch {
                record: r.vignette_id.clone(),
                expected: vignette.id().to_string(),
            });
        }
        let picked = r.harms(scope);
        if picked.is_empty() {
            continue;
        }
        if !annotators.insert(r.annotator_id.as_str()) {
            return Err(Error::DuplicateAnnotation {
                annotator_id: r.annotator_id.clone(),
                vignette_id: r.vignette_id.clone(),
            });
        }
        for h in picked {
            let slot = counts.iter_mut().find(|c| &c.harm_id == h).ok_or_else(|| {
                Error::Selection(format!("harm `{h}` is not an option of {} ({})", vignette.id(), scope.as_str()))
            })?;
            slot.count += 1;
        }
    }
    if annotators.is_empty() {
        return Err(Error::EmptyTally(vignette.id().to_string()));
    }
    let t = VoteTally {
        vignette_id: vignette.id().to_string(),
        scope,
        n_annotators: annotators.len() as u64,
        counts,
        none_option: options.iter().find(|o| o.is_none).map(|o| o.id.clone()),
        max_selections: vignette.max_selections,
    };
    t.validate()?;
    Ok(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Majority,
    NearTieFallback,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Majority => "majority",
            Rule::NearTieFallback => "near-tie-fallback",
        }
    }
}

/// Half-up rounded percentage of `count / n`, in integer arithmetic.
pub fn rounded_percent(count: u64, n: u64) -> u64 {
    (200 * count + n) / (2 * n)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aggregation {
    pub retained: Vec<String>,
    pub rule: Rule,
}

/// Consensus set of a tally.
///
/// Harms with C(h)/N ≥ τ are retained. If none qualifies, the most voted
/// harms are kept together with every harm whose rounded percentage lies
/// within `tolerance_pp` points of the top one. The none option is never
/// retained, so a tally with only none votes yields an empty set. The result
/// is ordered by count, then option order.
pub fn aggregate(tally: &VoteTally, tau: f64, tolerance_pp: u32) -> Result<Aggregation> {
    tally.validate()?;
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid("tau", "must lie in (0, 1]"));
    }
    if tally.total_votes() == 0 {
        return Err(Error::EmptyTally(tally.vignette_id.clone()));
    }
    let n = tally.n_annotators;
    let mut eligible: Vec<&HarmCount> = tally
        .counts
        .iter()
        .filter(|c| c.count > 0 && Some(&c.harm_id) != tally.none_option.as_ref())
        .collect();
    // Stable sort keeps option order among equal counts.
    eligible.sort_by_key(|c| std::cmp::Reverse(c.count));

    let threshold = tau * n as f64 - 1e-9;
    let majority: Vec<String> = eligible
        .iter()
        .filter(|c| c.count as f64 >= threshold)
        .map(|c| c.harm_id.clone())
        .collect();
    if !majority.is_empty() {
        return Ok(Aggregation {
            retained: majority,
            rule: Rule::Majority,
        });
    }
    let retained = match eligible.first() {
        None => Vec::new(),
        Some(top) => {
            let floor = rounded_percent(top.count, n).saturating_sub(tolerance_pp as u64);
            eligible
                .iter()
                .filter(|c| rounded_percent(c.count, n) >= floor)
                .map(|c| c.harm_id.clone())
                .collect()
        }
    };
    Ok(Aggregation {
        retained,
        rule: Rule::NearTieFallback,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmShare {
    pub harm_id: String,
    pub count: u64,
    pub proportion: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub stakeholder_id: String,
    pub bias_id: String,
    pub scope: Scope,
    pub vignette_id: String,
    pub n_annotators: u64,
    /// Voted harms by count, descending.
    pub harms: Vec<HarmShare>,
    pub retained: Vec<String>,
    /// Absent only for a question nobody answered, which happens for the
    /// individual question on group vignettes.
    pub rule_applied: Option<Rule>,
}

impl MatrixCell {
    fn empty(stakeholder_id: &str, bias_id: &str, scope: Scope, vignette_id: &str) -> Self {
        MatrixCell {
            stakeholder_id: stakeholder_id.to_string(),
            bias_id: bias_id.to_string(),
            scope,
            vignette_id: vignette_id.to_string(),
            n_annotators: 0,
            harms: Vec::new(),
            retained: Vec::new(),
            rule_applied: None,
        }
    }

    pub fn from_tally(stakeholder_id: &str, bias_id: &str, tally: &VoteTally, params: &Params) -> Result<Self> {
        let agg = aggregate(tally, params.tau, params.tolerance_pp)?;
        let n = tally.n_annotators;
        let mut harms: Vec<HarmShare> = tally
            .counts
            .iter()
            .filter(|c| c.count > 0)
            .map(|c| HarmShare {
                harm_id: c.harm_id.clone(),
                count: c.count,
                proportion: c.count as f64 / n as f64,
            })
            .collect();
        harms.sort_by_key(|c| std::cmp::Reverse(c.count));
        Ok(MatrixCell {
            stakeholder_id: stakeholder_id.to_string(),
            bias_id: bias_id.to_string(),
            scope: tally.scope,
            vignette_id: tally.vignette_id.clone(),
            n_annotators: n,
            harms,
            retained: agg.retained,
            rule_applied: Some(agg.rule),
        })
    }

    pub fn count(&self, harm_id: &str) -> u64 {
        self.harms.iter().find(|h| h.harm_id == harm_id).map_or(0, |h| h.count)
    }

    pub fn percent(&self, harm_id: &str) -> u64 {
        if self.n_annotators == 0 {
            0
        } else {
            rounded_percent(self.count(harm_id), self.n_annotators)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveEthicalMatrix {
    pub study_id: String,
    pub domain: String,
    pub snapshot_digest: String,
    pub stakeholders: Vec<String>,
    pub biases: Vec<String>,
    /// Individual-scope cells, stakeholder-major.
    pub individual: Vec<MatrixCell>,
    /// Representational-scope cells for group stakeholders, stakeholder-major.
    pub representational: Vec<MatrixCell>,
}

impl DescriptiveEthicalMatrix {
    pub fn cell(&self, stakeholder_id: &str, bias_id: &str, scope: Scope) -> Option<&MatrixCell> {
        let grid = match scope {
            Scope::Individual => &self.individual,
            Scope::Representational => &self.representational,
        };
        grid.iter().find(|c| c.stakeholder_id == stakeholder_id && c.bias_id == bias_id)
    }

    /// The cell a stakeholder is read from: representational for group
    /// stakeholders, individual otherwise.
    pub fn primary_cell(&self, stakeholder_id: &str, bias_id: &str) -> Option<&MatrixCell> {
        self.cell(stakeholder_id, bias_id, Scope::Representational)
            .or_else(|| self.cell(stakeholder_id, bias_id, Scope::Individual))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("dEM serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("dEM: {e}")))
    }

    /// Stakeholder rows by bias columns; each cell lists retained harms with
    /// integer percentages.
    pub fn to_markdown(&self, config: &StudyConfig) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Descriptive ethical matrix: {}\n", config.domain);
        let bias_labels: Vec<&str> = self
            .biases
            .iter()
            .map(|b| config.bias(b).map_or(b.as_str(), |x| x.label.as_str()))
            .collect();
        let _ = writeln!(out, "| Stakeholder | {} |", bias_labels.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(self.biases.len()));
        for s in &self.stakeholders {
            let label = config.stakeholder(s).map_or(s.as_str(), |x| x.label.as_str());
            let cells: Vec<String> = self
                .biases
                .iter()
                .map(|b| match self.primary_cell(s, b) {
                    Some(c) if !c.retained.is_empty() => c
                        .retained
                        .iter()
                        .map(|h| format!("{} ({}%)", config.harm_label(h).to_lowercase(), c.percent(h)))
                        .collect::<Vec<_>>()
                        .join(" / "),
                    _ => "-".to_string(),
                })
                .collect();
            let _ = writeln!(out, "| {label} | {} |", cells.join(" | "));
        }
        out.push_str("\nMajority threshold τ = ");
        let _ = writeln!(out, "{}; near-ties within ±{} points.", config.params.tau, config.params.tolerance_pp);
        out
    }
}

/// Aggregates every (stakeholder, bias) cell of the study.
pub fn build_dem(store: &AnnotationStore, corpus: &[AugmentedVignette], config: &StudyConfig) -> Result<DescriptiveEthicalMatrix> {
    let mut dem = DescriptiveEthicalMatrix {
        study_id: config.study_id.clone(),
        domain: config.domain.clone(),
        snapshot_digest: store.snapshot_digest(),
        stakeholders: config.stakeholders.iter().map(|s| s.id.clone()).collect(),
        biases: config.biases.iter().map(|b| b.id.clone()).collect(),
        individual: Vec::new(),
        representational: Vec::new(),
    };
    let mut gaps = Vec::new();
    for s in &config.stakeholders {
        for b in &config.biases {
            let vid = vignette_id(&config.domain, &s.id, &b.id);
            let Some(v) = corpus.iter().find(|v| v.id() == vid) else {
                gaps.push(vid);
                continue;
            };
            let records: Vec<&AnnotationRecord> = store.records_for(&vid).collect();
            if records.is_empty() {
                gaps.push(vid);
                continue;
            }
            match tally(records.iter().copied(), v, Scope::Individual) {
                Ok(t) => dem.individual.push(MatrixCell::from_tally(&s.id, &b.id, &t, &config.params)?),
                Err(Error::EmptyTally(_)) if s.is_decision_subject_group => {
                    dem.individual.push(MatrixCell::empty(&s.id, &b.id, Scope::Individual, &vid))
                }
                Err(Error::EmptyTally(_)) => gaps.push(vid.clone()),
                Err(e) => return Err(e),
            }
            if s.is_decision_subject_group {
                match tally(records.iter().copied(), v, Scope::Representational) {
                    Ok(t) => dem.representational.push(MatrixCell::from_tally(&s.id, &b.id, &t, &config.params)?),
                    Err(Error::EmptyTally(_)) => gaps.push(format!("{vid} (representational)")),
                    Err(e) => return Err(e),
                }
            }
        }
    }
    if !gaps.is_empty() {
        return Err(Error::CoverageGap(gaps));
    }
    Ok(dem)
}
