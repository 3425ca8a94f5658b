//! Domain model of a study: bias types, harm taxonomies, stakeholders and
//! the validated [`StudyConfig`].

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LifecycleStage {
    DataCollection,
    Measurement,
    ModelDesign,
    Evaluation,
    Deployment,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasType {
    pub id: String,
    pub label: String,
    pub lifecycle_stage: LifecycleStage,
    #[serde(default)]
    pub description: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HarmCategory {
    Allocative,
    QualityOfService,
    Interpersonal,
    Representational,
    SocialSystem,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AppliesTo {
    Individual,
    Group,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmType {
    pub id: String,
    pub label: String,
    pub category: HarmCategory,
    pub applies_to: AppliesTo,
    /// Answer text shown next to the option in the questionnaire.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blurb: Option<String>,
}

impl HarmType {
    pub fn is_none_option(&self) -> bool {
        self.category == HarmCategory::None
    }
}

/// Which of the two questionnaires a harm selection belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    Individual,
    Representational,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Individual => "individual",
            Scope::Representational => "representational",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StakeholderKind {
    Active,
    Passive,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stakeholder {
    pub id: String,
    pub label: String,
    pub kind: StakeholderKind,
    #[serde(default)]
    pub is_decision_subject_group: bool,
    /// Second-person role phrase used in closing questions ("a job applicant").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perspective: Option<String>,
}

impl Stakeholder {
    pub fn perspective(&self) -> String {
        match &self.perspective {
            Some(p) => p.clone(),
            None => {
                let label = self.label.to_lowercase();
                let article = match label.chars().next() {
                    Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
                    _ => "a",
                };
                format!("{article} {label}")
            }
        }
    }

    /// Scope whose questionnaire characterises this stakeholder in the matrices.
    pub fn primary_scope(&self) -> Scope {
        if self.is_decision_subject_group {
            Scope::Representational
        } else {
            Scope::Individual
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_token("stakeholders.id", &self.id)?;
        if self.is_decision_subject_group && self.kind != StakeholderKind::Passive {
            return Err(Error::invalid(
                format!("stakeholders[{}].is_decision_subject_group", self.id),
                "only passive stakeholders can be decision-subject groups",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(default = "Params::default_tau")]
    pub tau: f64,
    #[serde(default = "Params::default_tolerance")]
    pub tolerance_pp: u32,
    #[serde(default = "Params::default_alpha")]
    pub alpha_omnibus: f64,
    #[serde(default = "Params::default_z")]
    pub z_threshold: f64,
    #[serde(default = "Params::default_max_selections")]
    pub max_selections: usize,
    /// Shuffle questionnaire options per vignette (seeded). Off for reproducible fixtures.
    #[serde(default)]
    pub shuffle_options: bool,
}

impl Params {
    fn default_tau() -> f64 {
        0.5
    }
    fn default_tolerance() -> u32 {
        5
    }
    fn default_alpha() -> f64 {
        0.10
    }
    fn default_z() -> f64 {
        1.64
    }
    fn default_max_selections() -> usize {
        2
    }
}

impl Default for Params {
    fn default() -> Self {
        Params {
            tau: Self::default_tau(),
            tolerance_pp: Self::default_tolerance(),
            alpha_omnibus: Self::default_alpha(),
            z_threshold: Self::default_z(),
            max_selections: Self::default_max_selections(),
            shuffle_options: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSettings {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "ProviderSettings::default_rate")]
    pub rate_limit_per_min: u32,
}

impl ProviderSettings {
    fn default_rate() -> u32 {
        60
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub study_id: String,
    pub domain: String,
    pub biases: Vec<BiasType>,
    pub individual_harms: Vec<HarmType>,
    pub representational_harms: Vec<HarmType>,
    pub stakeholders: Vec<Stakeholder>,
    #[serde(default)]
    pub params: Params,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<ProviderSettings>,
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: StudyConfig =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("study config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        check_token("study_id", &self.study_id)?;
        if self.domain.trim().is_empty() {
            return Err(Error::invalid("domain", "must be non-empty"));
        }
        if self.biases.is_empty() {
            return Err(Error::invalid("biases", "must be non-empty"));
        }
        if self.individual_harms.is_empty() {
            return Err(Error::invalid("individual_harms", "must be non-empty"));
        }
        if self.stakeholders.is_empty() {
            return Err(Error::invalid("stakeholders", "must be non-empty"));
        }
        if self.stakeholders.iter().any(|s| s.is_decision_subject_group)
            && self.representational_harms.is_empty()
        {
            return Err(Error::invalid(
                "representational_harms",
                "must be non-empty when a decision-subject group stakeholder is configured",
            ));
        }

        unique_ids("biases", self.biases.iter().map(|b| b.id.as_str()))?;
        for b in &self.biases {
            check_token("biases.id", &b.id)?;
        }
        // Harm ids must resolve against exactly one list.
        unique_ids(
            "harms",
            self.individual_harms
                .iter()
                .chain(&self.representational_harms)
                .map(|h| h.id.as_str()),
        )?;
        for h in self.individual_harms.iter().chain(&self.representational_harms) {
            check_token("harms.id", &h.id)?;
        }
        if self.individual_harms.iter().any(HarmType::is_none_option) {
            return Err(Error::invalid(
                "individual_harms",
                "the none option is only allowed in representational_harms",
            ));
        }
        if self
            .representational_harms
            .iter()
            .filter(|h| h.is_none_option())
            .count()
            > 1
        {
            return Err(Error::invalid(
                "representational_harms",
                "at most one entry may have category none",
            ));
        }
        unique_ids("stakeholders", self.stakeholders.iter().map(|s| s.id.as_str()))?;
        for s in &self.stakeholders {
            s.validate()?;
        }

        let p = &self.params;
        if !(p.tau > 0.0 && p.tau <= 1.0) {
            return Err(Error::invalid("params.tau", "must be in (0, 1]"));
        }
        if !(p.alpha_omnibus > 0.0 && p.alpha_omnibus < 1.0) {
            return Err(Error::invalid("params.alpha_omnibus", "must be in (0, 1)"));
        }
        if !p.z_threshold.is_finite() {
            return Err(Error::invalid("params.z_threshold", "must be finite"));
        }
        if p.max_selections < 1 {
            return Err(Error::invalid("params.max_selections", "must be at least 1"));
        }
        if let Some(provider) = &self.provider {
            if provider.rate_limit_per_min == 0 {
                return Err(Error::invalid(
                    "provider.rate_limit_per_min",
                    "must be at least 1",
                ));
            }
        }
        Ok(())
    }

    pub fn bias(&self, id: &str) -> Option<&BiasType> {
        self.biases.iter().find(|b| b.id == id)
    }

    pub fn stakeholder(&self, id: &str) -> Option<&Stakeholder> {
        self.stakeholders.iter().find(|s| s.id == id)
    }

    pub fn harms(&self, scope: Scope) -> &[HarmType] {
        match scope {
            Scope::Individual => &self.individual_harms,
            Scope::Representational => &self.representational_harms,
        }
    }

    /// Resolves a harm id against both lists.
    pub fn harm(&self, id: &str) -> Option<(&HarmType, Scope)> {
        if let Some(h) = self.individual_harms.iter().find(|h| h.id == id) {
            return Some((h, Scope::Individual));
        }
        self.representational_harms
            .iter()
            .find(|h| h.id == id)
            .map(|h| (h, Scope::Representational))
    }

    pub fn harm_label<'a>(&'a self, id: &'a str) -> &'a str {
        self.harm(id).map(|(h, _)| h.label.as_str()).unwrap_or(id)
    }

    pub fn is_none_harm(&self, id: &str) -> bool {
        self.harm(id).is_some_and(|(h, _)| h.is_none_option())
    }
}

pub fn load_study_config(path: &Path) -> Result<StudyConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    StudyConfig::from_json(&text)
}

pub fn save_study_config(config: &StudyConfig, path: &Path) -> Result<()> {
    fs::write(path, config.to_json()).map_err(|e| Error::io(path, e))
}

const BUNDLED_DIAGNOSIS: &str = include_str!("../data/studies/diagnosis.json");
const BUNDLED_HIRING: &str = include_str!("../data/studies/hiring.json");

/// Names of the study configurations shipped with the crate.
pub const BUNDLED_STUDIES: [&str; 2] = ["diagnosis", "hiring"];

pub fn bundled_study(name: &str) -> Result<StudyConfig> {
    let text = match name {
        "diagnosis" => BUNDLED_DIAGNOSIS,
        "hiring" => BUNDLED_HIRING,
        other => {
            return Err(Error::Unknown {
                kind: "bundled study",
                id: other.to_string(),
            })
        }
    };
    StudyConfig::from_json(text)
}

/// The five lifecycle bias types, the nine individual harms and the seven
/// representational options (including "none").
pub fn default_taxonomies() -> (Vec<BiasType>, Vec<HarmType>, Vec<HarmType>) {
    let bias = |id: &str, label: &str, stage, description: &str| BiasType {
        id: id.into(),
        label: label.into(),
        lifecycle_stage: stage,
        description: description.into(),
    };
    let biases = vec![
        bias(
            "representation",
            "Representation bias",
            LifecycleStage::DataCollection,
            "The training data does not adequately capture the diversity of the population.",
        ),
        bias(
            "measurement",
            "Measurement bias",
            LifecycleStage::Measurement,
            "Features or labels are poor proxies for the construct, or are measured inconsistently across groups.",
        ),
        bias(
            "algorithmic",
            "Algorithmic bias",
            LifecycleStage::ModelDesign,
            "Model design choices produce uneven error rates across groups.",
        ),
        bias(
            "evaluation",
            "Evaluation bias",
            LifecycleStage::Evaluation,
            "The benchmark used to assess the model does not represent the intended population.",
        ),
        bias(
            "deployment",
            "Deployment bias",
            LifecycleStage::Deployment,
            "The system is used in a context it was not designed for.",
        ),
    ];

    use HarmCategory::*;
    let harm = |label: &str, category, applies_to| HarmType {
        id: kebab_id(label),
        label: label.into(),
        category,
        applies_to,
        blurb: Option::None,
    };
    let individual = vec![
        harm("Opportunity loss", Allocative, AppliesTo::Individual),
        harm("Economic loss", Allocative, AppliesTo::Individual),
        harm("Alienation", QualityOfService, AppliesTo::Individual),
        harm("Increased labor", QualityOfService, AppliesTo::Individual),
        harm("Service or benefit loss", QualityOfService, AppliesTo::Individual),
        harm("Loss of agency or control", Interpersonal, AppliesTo::Individual),
        harm("Technology-facilitated violence", Interpersonal, AppliesTo::Individual),
        harm("Diminished health and well-being", Interpersonal, AppliesTo::Individual),
        harm("Privacy violation", Interpersonal, AppliesTo::Individual),
    ];
    let mut representational = vec![
        harm("Stereotyping", Representational, AppliesTo::Group),
        harm("Demeaning", Representational, AppliesTo::Group),
        harm("Erasure", Representational, AppliesTo::Group),
        harm("Alienation", Representational, AppliesTo::Group),
        harm("Denying self-identity", Representational, AppliesTo::Group),
        harm("Reifying categories", Representational, AppliesTo::Group),
        harm("None", None, AppliesTo::Group),
    ];
    // Alienation exists in both questionnaires; the group variant gets its own id.
    representational[3].id = "group-alienation".into();
    (biases, individual, representational)
}

/// Lowercase kebab-case token derived from a display label.
pub fn kebab_id(label: &str) -> String {
    let mut out = String::with_capacity(label.len());
    let mut dash = false;
    for c in label.chars() {
        if c.is_ascii_alphanumeric() {
            if dash && !out.is_empty() {
                out.push('-');
            }
            dash = false;
            out.push(c.to_ascii_lowercase());
        } else {
            dash = true;
        }
    }
    out
}

pub(crate) fn check_token(field: &str, id: &str) -> Result<()> {
    if id.is_empty() {
        return Err(Error::invalid(field, "id must be non-empty"));
    }
    if id.chars().any(|c| c.is_whitespace() || c == ',' || c == ';' || c.is_control()) {
        return Err(Error::invalid(
            field,
            format!("id `{id}` must not contain whitespace, commas, semicolons or control characters"),
        ));
    }
    Ok(())
}

fn unique_ids<'a>(field: &str, ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateId {
                field: field.into(),
                id: id.into(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_diagnosis_has_expected_shape() {
        let c = bundled_study("diagnosis").unwrap();
        assert_eq!(c.biases.len(), 5);
        assert_eq!(c.individual_harms.len(), 9);
        assert_eq!(c.representational_harms.len(), 7);
        assert_eq!(c.stakeholders.len(), 4);
    }

    #[test]
    fn bundled_configs_follow_default_taxonomy() {
        let (biases, ind, rep) = default_taxonomies();
        for name in BUNDLED_STUDIES {
            let c = bundled_study(name).unwrap();
            let ids = |v: &[HarmType]| v.iter().map(|h| (h.id.clone(), h.category)).collect::<Vec<_>>();
            assert_eq!(ids(&c.individual_harms), ids(&ind));
            assert_eq!(ids(&c.representational_harms), ids(&rep));
            let b: Vec<_> = c.biases.iter().map(|b| (&b.id, b.lifecycle_stage)).collect();
            let d: Vec<_> = biases.iter().map(|b| (&b.id, b.lifecycle_stage)).collect();
            assert_eq!(b, d);
        }
    }

    #[test]
    fn default_taxonomies_contents() {
        let (biases, ind, rep) = default_taxonomies();
        assert_eq!(biases.len(), 5);
        assert!(ind.iter().any(|h| h.id == "privacy-violation"));
        assert_eq!(rep.iter().filter(|h| h.is_none_option()).count(), 1);
        assert_eq!(default_taxonomies(), (biases, ind, rep));
    }

    #[test]
    fn tau_defaults_when_omitted() {
        let mut v: serde_json::Value =
            serde_json::from_str(BUNDLED_DIAGNOSIS).unwrap();
        v["params"].as_object_mut().unwrap().remove("tau");
        let c = StudyConfig::from_json(&v.to_string()).unwrap();
        assert_eq!(c.params.tau, 0.5);
        v.as_object_mut().unwrap().remove("params");
        let c = StudyConfig::from_json(&v.to_string()).unwrap();
        assert_eq!(c.params, Params::default());
    }

    #[test]
    fn duplicate_bias_ids_rejected() {
        let mut c = bundled_study("hiring").unwrap();
        c.biases[1].id = c.biases[0].id.clone();
        assert!(matches!(
            StudyConfig::from_json(&c.to_json()),
            Err(Error::DuplicateId { .. })
        ));
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(BUNDLED_HIRING).unwrap();
        v["surprise"] = serde_json::json!(1);
        assert!(matches!(StudyConfig::from_json(&v.to_string()), Err(Error::Parse(_))));
    }

    #[test]
    fn invariant_violations_name_the_field() {
        let mut c = bundled_study("hiring").unwrap();
        c.params.tau = 0.0;
        match c.validate() {
            Err(Error::Invalid { field, .. }) => assert_eq!(field, "params.tau"),
            other => panic!("{other:?}"),
        }
        let mut c = bundled_study("hiring").unwrap();
        c.stakeholders[3].is_decision_subject_group = true;
        assert!(c.validate().is_err());
        let mut c = bundled_study("hiring").unwrap();
        c.individual_harms[0].category = HarmCategory::None;
        assert!(c.validate().is_err());
        let mut c = bundled_study("hiring").unwrap();
        c.representational_harms[0].id = c.individual_harms[0].id.clone();
        assert!(matches!(c.validate(), Err(Error::DuplicateId { .. })));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("study.json");
        let c = bundled_study("diagnosis").unwrap();
        save_study_config(&c, &path).unwrap();
        assert_eq!(load_study_config(&path).unwrap(), c);
    }

    #[test]
    fn kebab_ids() {
        assert_eq!(kebab_id("Technology-facilitated violence"), "technology-facilitated-violence");
        assert_eq!(kebab_id("  Loss of agency / control "), "loss-of-agency-control");
    }

    #[test]
    fn perspective_falls_back_to_label() {
        let s = Stakeholder {
            id: "insurer".into(),
            label: "Insurer".into(),
            kind: StakeholderKind::Passive,
            is_decision_subject_group: false,
            perspective: None,
        };
        assert_eq!(s.perspective(), "an insurer");
    }
}
