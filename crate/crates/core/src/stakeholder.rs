//! Stakeholder candidate generation and curation.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genai::{generate, PromptRequest, Provider, GENERATION_TEMPERATURE};
use crate::taxonomy::{kebab_id, Stakeholder, StakeholderKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Llm,
    Manual,
    Merged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StakeholderCandidateSet {
    pub domain: String,
    pub candidates: Vec<Stakeholder>,
    /// Role descriptions keyed by candidate id, kept for reviewers.
    #[serde(default)]
    pub roles: BTreeMap<String, String>,
    pub provenance: Provenance,
    #[serde(default)]
    pub raw_response: String,
}

impl StakeholderCandidateSet {
    pub fn manual(domain: &str, candidates: Vec<Stakeholder>) -> Result<Self> {
        let set = StakeholderCandidateSet {
            domain: domain.to_string(),
            candidates,
            roles: BTreeMap::new(),
            provenance: Provenance::Manual,
            raw_response: String::new(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(Error::EmptyParse);
        }
        let mut seen = HashSet::new();
        for c in &self.candidates {
            c.validate()?;
            if !seen.insert(c.id.as_str()) {
                return Err(Error::DuplicateId {
                    field: "candidates".into(),
                    id: c.id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.id.as_str()).collect()
    }

    /// Union of two candidate sets; on id clashes the entry from `self` wins.
    pub fn merge(&self, other: &StakeholderCandidateSet) -> StakeholderCandidateSet {
        let mut out = self.clone();
        for c in &other.candidates {
            if !out.candidates.iter().any(|x| x.id == c.id) {
                out.candidates.push(c.clone());
                if let Some(r) = other.roles.get(&c.id) {
                    out.roles.insert(c.id.clone(), r.clone());
                }
            }
        }
        if !other.raw_response.is_empty() {
            if !out.raw_response.is_empty() {
                out.raw_response.push_str("\n\n");
            }
            out.raw_response.push_str(&other.raw_response);
        }
        out.provenance = Provenance::Merged;
        out
    }
}

/// Asks the provider for stakeholders of `domain` and parses the answer.
pub fn generate_stakeholders(domain: &str, provider: &dyn Provider) -> Result<StakeholderCandidateSet> {
    let request = PromptRequest::new("stakeholders", [("domain", domain)]).with_temperature(GENERATION_TEMPERATURE);
    let response = generate(&request, provider)?;
    parse_stakeholders(domain, &response.text)
}

const GROUP_HINTS: [&str; 5] = ["marginali", "minorit", "underrepresented", "historically", "protected group"];

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Unknown,
    Active,
    Passive,
}

/// Parses a provider answer into candidates.
///
/// Accepts numbered (`1.`, `1)`) and bulleted (`-`, `*`, `•`) items, optional
/// `[id]` markers and a `<group>` tag. Kind comes from the enclosing
/// "Active"/"Passive" heading; items before any heading default to passive.
pub fn parse_stakeholders(domain: &str, text: &str) -> Result<StakeholderCandidateSet> {
    let mut section = Section::Unknown;
    let mut candidates: Vec<Stakeholder> = Vec::new();
    let mut roles = BTreeMap::new();
    let mut defaulted = 0usize;

    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let item = strip_list_marker(line);
        let Some(item) = item else {
            if let Some(s) = heading(line) {
                section = s;
            }
            continue;
        };
        if item.is_empty() {
            continue;
        }
        // A list item that is itself a heading, e.g. "1. Active stakeholders:".
        if let Some(s) = heading(item) {
            if item.len() < 40 {
                section = s;
                continue;
            }
        }
        let Some((id_hint, name, role)) = split_item(item) else {
            continue;
        };
        let group_tag = name.contains("<group>");
        let label = name.replace("<group>", "").split_whitespace().collect::<Vec<_>>().join(" ");
        if label.is_empty() {
            continue;
        }
        let mut id = id_hint.unwrap_or_else(|| kebab_id(&label));
        if id.is_empty() {
            continue;
        }
        let base = id.clone();
        let mut k = 2;
        while candidates.iter().any(|c| c.id == id) {
            id = format!("{base}-{k}");
            k += 1;
        }
        let kind = match section {
            Section::Active => StakeholderKind::Active,
            Section::Passive => StakeholderKind::Passive,
            Section::Unknown => {
                defaulted += 1;
                StakeholderKind::Passive
            }
        };
        let lower = label.to_lowercase();
        let hinted = GROUP_HINTS.iter().any(|h| lower.contains(h));
        let is_group = kind == StakeholderKind::Passive && (group_tag || hinted);
        if !role.is_empty() {
            roles.insert(id.clone(), role);
        }
        candidates.push(Stakeholder {
            id,
            label,
            kind,
            is_decision_subject_group: is_group,
            perspective: None,
        });
    }

    if defaulted > 0 {
        log::warn!("{defaulted} stakeholder(s) had no active/passive heading; classified as passive");
    }
    if candidates.is_empty() {
        return Err(Error::EmptyParse);
    }
    let set = StakeholderCandidateSet {
        domain: domain.to_string(),
        candidates,
        roles,
        provenance: Provenance::Llm,
        raw_response: text.to_string(),
    };
    set.validate()?;
    Ok(set)
}

fn heading(line: &str) -> Option<Section> {
    let l = line.trim_matches(|c: char| c == '#' || c == '*' || c == ':' || c.is_whitespace()).to_lowercase();
    if l.starts_with("active") {
        Some(Section::Active)
    } else if l.starts_with("passive") {
        Some(Section::Passive)
    } else {
        None
    }
}

fn strip_list_marker(line: &str) -> Option<&str> {
    for bullet in ["- ", "* ", "• ", "– "] {
        if let Some(rest) = line.strip_prefix(bullet) {
            return Some(rest.trim());
        }
    }
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return Some(rest.trim());
        }
    }
    None
}

/// Splits `[id] Name -- role` into its parts. Bold markers are dropped.
fn split_item(item: &str) -> Option<(Option<String>, String, String)> {
    let item = item.replace("**", "");
    let mut rest = item.trim();
    let mut id = None;
    if let Some(after) = rest.strip_prefix('[') {
        let end = after.find(']')?;
        let hint = kebab_id(&after[..end]);
        if !hint.is_empty() {
            id = Some(hint);
        }
        rest = after[end + 1..].trim();
    }
    let (name, role) = [" -- ", " – ", " — ", " - ", ": "]
        .iter()
        .find_map(|sep| rest.split_once(sep))
        .unwrap_or((rest, ""));
    Some((id, name.trim().trim_end_matches(':').to_string(), role.trim().to_string()))
}

/// Keeps the candidates named in `keep`, in that order.
pub fn curate(set: &StakeholderCandidateSet, keep: &[&str]) -> Result<Vec<Stakeholder>> {
    if keep.is_empty() {
        return Err(Error::invalid("keep", "must name at least one stakeholder"));
    }
    let mut seen = HashSet::new();
    keep.iter()
        .map(|id| {
            if !seen.insert(*id) {
                return Err(Error::DuplicateId {
                    field: "keep".into(),
                    id: id.to_string(),
                });
            }
            set.candidates
                .iter()
                .find(|c| c.id == *id)
                .cloned()
                .ok_or_else(|| Error::Unknown {
                    kind: "stakeholder",
                    id: id.to_string(),
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genai::{MockProvider, ScriptedProvider};
    use proptest::prelude::*;

    #[test]
    fn hiring_mock_yields_expected_roles() {
        let set = generate_stakeholders("hiring", &MockProvider::new(0)).unwrap();
        let get = |id: &str| set.candidates.iter().find(|c| c.id == id).unwrap();
        assert_eq!(get("applicant").kind, StakeholderKind::Passive);
        assert!(get("applicant").label.starts_with("Job applicants"));
        assert_eq!(get("developer").kind, StakeholderKind::Active);
        assert!(get("developer").label.contains("developers"));
        assert!(get("marginalized-applicants").is_decision_subject_group);
        assert_eq!(set.provenance, Provenance::Llm);
        assert_eq!(set.candidates.len(), 13);
    }

    #[test]
    fn curate_keeps_order() {
        let set = generate_stakeholders("hiring", &MockProvider::new(0)).unwrap();
        let keep = ["applicant", "marginalized-applicants", "developer", "company"];
        let got = curate(&set, &keep).unwrap();
        assert_eq!(got.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), keep);
        let all = curate(&set, &set.ids()).unwrap();
        assert_eq!(all, set.candidates);
        assert!(matches!(curate(&set, &["nobody"]), Err(Error::Unknown { .. })));
        assert!(curate(&set, &[]).is_err());
    }

    #[test]
    fn empty_response_is_empty_parse() {
        let p = ScriptedProvider::new(["Sorry, I can't list anything useful here."]);
        assert!(matches!(generate_stakeholders("x", &p), Err(Error::EmptyParse)));
        assert!(matches!(parse_stakeholders("x", ""), Err(Error::EmptyParse)));
    }

    #[test]
    fn bullets_without_sections_default_passive() {
        let text = "Here you go:\n- Loan officers: review flagged cases\n* Applicants from minority communities: affected\n• Bank\nrandom prose";
        let set = parse_stakeholders("loans", text).unwrap();
        assert_eq!(set.candidates.len(), 3);
        assert!(set.candidates.iter().all(|c| c.kind == StakeholderKind::Passive));
        assert!(set.candidates[1].is_decision_subject_group);
        assert_eq!(set.candidates[0].id, "loan-officers");
        assert_eq!(set.roles["loan-officers"], "review flagged cases");
        assert!(set.raw_response.contains("random prose"));
    }

    #[test]
    fn markdown_headings_and_bold() {
        let text = "### Active stakeholders\n1) **Hospital** -- runs it\n\n**Passive stakeholders:**\n1. **Patients** -- affected\n2. Patients -- duplicate name";
        let set = parse_stakeholders("d", text).unwrap();
        assert_eq!(set.ids(), ["hospital", "patients", "patients-2"]);
        assert_eq!(set.candidates[0].kind, StakeholderKind::Active);
        assert_eq!(set.candidates[1].kind, StakeholderKind::Passive);
    }

    #[test]
    fn merge_unions_and_marks_provenance() {
        let a = parse_stakeholders("d", "Active\n1. A -- x").unwrap();
        let b = parse_stakeholders("d", "Passive\n1. A -- y\n2. B -- z").unwrap();
        let m = a.merge(&b);
        assert_eq!(m.ids(), ["a", "b"]);
        assert_eq!(m.candidates[0].kind, StakeholderKind::Active);
        assert_eq!(m.provenance, Provenance::Merged);
    }

    proptest! {
        #[test]
        fn curate_is_idempotent(mask in proptest::collection::vec(any::<bool>(), 13), seed in 0u64..5) {
            let set = generate_stakeholders("hiring", &MockProvider::new(seed)).unwrap();
            let keep: Vec<&str> = set.ids().into_iter().zip(&mask).filter(|(_, m)| **m).map(|(id, _)| id).collect();
            prop_assume!(!keep.is_empty());
            let once = curate(&set, &keep).unwrap();
            let again_set = StakeholderCandidateSet::manual("hiring", once.clone()).unwrap();
            prop_assert_eq!(curate(&again_set, &keep).unwrap(), once);
        }
    }
}
