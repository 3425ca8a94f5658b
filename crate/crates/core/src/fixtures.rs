//! Bundled reference annotations for the diagnosis and hiring studies.
//!
//! Each fixture stores per-cell vote counts with the annotator count and the
//! published reference results. Counts are expanded into individual
//! annotation records deterministically.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationRecord, AnnotationStore, AnnotatorKind};
use crate::error::{Error, Result};
use crate::taxonomy::Scope;
use crate::vignette::{vignette_id, AugmentedVignette};

const DIAGNOSIS: &str = include_str!("../data/fixtures/diagnosis.json");
const HIRING: &str = include_str!("../data/fixtures/hiring.json");

/// Timestamp stamped on every expanded fixture record.
pub const FIXTURE_TIMESTAMP: &str = "2025-01-01T00:00:00Z";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureCell {
    pub stakeholder: String,
    pub bias: String,
    pub scope: Scope,
    pub annotators: u64,
    pub counts: BTreeMap<String, u64>,
    /// Annotator count as printed, where it differs from `annotators`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub printed_annotators: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceDemCell {
    pub stakeholder: String,
    pub bias: String,
    pub retained: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceOmnibus {
    pub stakeholder: String,
    pub n_harms: usize,
    pub n_votes: u64,
    pub chi2: f64,
    pub dof: u32,
    pub p: f64,
    pub cramers_v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceResidual {
    pub stakeholder: String,
    pub bias: String,
    pub harm: String,
    pub z: f64,
    pub p: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    pub dem: Vec<ReferenceDemCell>,
    pub omnibus: Vec<ReferenceOmnibus>,
    pub residuals: Vec<ReferenceResidual>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub domain: String,
    pub cells: Vec<FixtureCell>,
    #[serde(default)]
    pub reference: Reference,
}

pub fn bundled_fixture(name: &str) -> Result<Fixture> {
    let text = match name {
        "diagnosis" => DIAGNOSIS,
        "hiring" => HIRING,
        other => {
            return Err(Error::Unknown {
                kind: "fixture",
                id: other.to_string(),
            })
        }
    };
    let f: Fixture = serde_json::from_str(text).map_err(|e| Error::Parse(format!("fixture {name}: {e}")))?;
    f.validate()?;
    Ok(f)
}

impl Fixture {
    /// Each cell must be realizable by annotators choosing one or two
    /// distinct harms: max count ≤ N ≤ total ≤ 2N.
    pub fn validate(&self) -> Result<()> {
        for c in &self.cells {
            let total: u64 = c.counts.values().sum();
            let max = c.counts.values().copied().max().unwrap_or(0);
            if c.annotators == 0 || max > c.annotators || total < c.annotators || total > 2 * c.annotators {
                return Err(Error::invalid(
                    format!("fixture cell {}/{}", c.stakeholder, c.bias),
                    format!("counts (total {total}, max {max}) cannot come from {} annotators", c.annotators),
                ));
            }
        }
        Ok(())
    }

    pub fn cell(&self, stakeholder: &str, bias: &str) -> Option<&FixtureCell> {
        self.cells.iter().find(|c| c.stakeholder == stakeholder && c.bias == bias)
    }

    /// Expands counts into records. Votes are laid out harm by harm and
    /// vote j goes to annotator j mod N, so every annotator receives one or
    /// two distinct harms.
    pub fn records(&self) -> Vec<AnnotationRecord> {
        let at: DateTime<Utc> = FIXTURE_TIMESTAMP.parse().expect("fixture timestamp");
        let mut out = Vec::new();
        for c in &self.cells {
            let vid = vignette_id(&self.domain, &c.stakeholder, &c.bias);
            let n = c.annotators as usize;
            let mut picks: Vec<Vec<String>> = vec![Vec::new(); n];
            let votes = c.counts.iter().flat_map(|(h, k)| std::iter::repeat_n(h, *k as usize));
            for (j, h) in votes.enumerate() {
                picks[j % n].push(h.clone());
            }
            for (i, harms) in picks.into_iter().enumerate() {
                let (individual, representational) = match c.scope {
                    Scope::Individual => (harms, Vec::new()),
                    Scope::Representational => (Vec::new(), harms),
                };
                out.push(AnnotationRecord {
                    annotator_id: format!("fx.{}.{}.{:02}", c.stakeholder, c.bias, i + 1),
                    annotator_kind: AnnotatorKind::Human,
                    vignette_id: vid.clone(),
                    individual_harms: individual,
                    representational_harms: representational,
                    submitted_at: at,
                });
            }
        }
        out
    }

    /// Appends the expanded records to `store`; returns how many were new.
    pub fn load_into(&self, store: &mut AnnotationStore, corpus: &[AugmentedVignette]) -> Result<usize> {
        store.append_all(self.records(), corpus)
    }
}
