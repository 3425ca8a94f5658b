//! Factorial vignette corpus: one scenario per (stakeholder, bias) cell with
//! its multiple-choice harm questionnaire attached.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::genai::{generate, PromptRequest, Provider, GENERATION_TEMPERATURE};
use crate::taxonomy::{BiasType, HarmType, Scope, Stakeholder, StudyConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VignetteProvenance {
    Llm,
    Manual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vignette {
    pub vignette_id: String,
    pub stakeholder_id: String,
    pub bias_id: String,
    pub text: String,
    pub question: String,
    pub provenance: VignetteProvenance,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McqOption {
    pub id: String,
    pub label: String,
    pub blurb: String,
    /// Abstention option; never retained by aggregation.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_none: bool,
}

impl McqOption {
    fn from_harm(h: &HarmType) -> Self {
        McqOption {
            id: h.id.clone(),
            label: h.label.clone(),
            blurb: h.blurb.clone().unwrap_or_else(|| h.label.clone()),
            is_none: h.is_none_option(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentedVignette {
    pub vignette: Vignette,
    pub individual_options: Vec<McqOption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub representational_question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub representational_options: Option<Vec<McqOption>>,
    pub max_selections: usize,
}

impl AugmentedVignette {
    pub fn id(&self) -> &str {
        &self.vignette.vignette_id
    }

    pub fn options(&self, scope: Scope) -> &[McqOption] {
        match scope {
            Scope::Individual => &self.individual_options,
            Scope::Representational => self.representational_options.as_deref().unwrap_or(&[]),
        }
    }

    pub fn has_option(&self, scope: Scope, harm_id: &str) -> bool {
        self.options(scope).iter().any(|o| o.id == harm_id)
    }
}

/// Manual text for one cell, replacing the generated scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VignetteOverride {
    pub text: String,
    #[serde(default)]
    pub question: Option<String>,
}

pub type Overrides = BTreeMap<String, VignetteOverride>;

pub fn vignette_id(domain: &str, stakeholder_id: &str, bias_id: &str) -> String {
    format!("{}.{stakeholder_id}.{bias_id}", crate::taxonomy::kebab_id(domain))
}

/// Closing question for the individual MCQ.
pub fn default_question(stakeholder: &Stakeholder) -> String {
    format!(
        "If you were {}, which of the following harms do you think you would personally most likely face?",
        stakeholder.perspective()
    )
}

/// Closing question for the representational MCQ of group stakeholders.
pub fn representational_question(stakeholder: &Stakeholder) -> String {
    format!(
        "If you were {}, which of the following harms do you think your group would most likely face?",
        stakeholder.perspective()
    )
}

fn bias_phrase(bias: &BiasType) -> String {
    let label = bias.label.trim();
    let stem = label
        .strip_suffix(" bias")
        .or_else(|| label.strip_suffix(" Bias"))
        .unwrap_or(label);
    stem.to_lowercase()
}

/// Splits a generated scenario into body and closing question.
pub fn split_scenario(response: &str) -> (String, Option<String>) {
    let lines: Vec<&str> = response.trim().lines().collect();
    let q = lines
        .iter()
        .rposition(|l| l.trim().to_lowercase().starts_with("if you were"));
    match q {
        Some(i) => {
            let body = lines[..i].join("\n").trim().to_string();
            let question = lines[i..].join(" ").trim().to_string();
            (body, Some(question))
        }
        None => (response.trim().to_string(), None),
    }
}

fn check_vignette(v: &Vignette) -> Result<()> {
    if v.text.trim().is_empty() {
        return Err(Error::invalid(format!("vignette {}", v.vignette_id), "text is empty"));
    }
    let q = v.question.to_lowercase();
    if !(q.contains("you ") || q.contains("your ")) {
        return Err(Error::invalid(
            format!("vignette {}", v.vignette_id),
            "question must address the stakeholder in the second person",
        ));
    }
    Ok(())
}

/// Generates the scenario for one (stakeholder, bias) cell.
pub fn generate_vignette(
    config: &StudyConfig,
    stakeholder: &Stakeholder,
    bias: &BiasType,
    provider: &dyn Provider,
) -> Result<Vignette> {
    let request = PromptRequest::new(
        "vignette",
        [
            ("bias", bias_phrase(bias)),
            ("domain", config.domain.clone()),
            ("stakeholder", stakeholder.perspective()),
        ],
    )
    .with_temperature(GENERATION_TEMPERATURE);
    let response = generate(&request, provider)?;
    let (text, question) = split_scenario(&response.text);
    let v = Vignette {
        vignette_id: vignette_id(&config.domain, &stakeholder.id, &bias.id),
        stakeholder_id: stakeholder.id.clone(),
        bias_id: bias.id.clone(),
        text,
        question: question.unwrap_or_else(|| default_question(stakeholder)),
        provenance: VignetteProvenance::Llm,
    };
    check_vignette(&v)?;
    Ok(v)
}

/// Attaches the MCQ for the vignette's stakeholder. Options follow taxonomy
/// order unless `shuffle_seed` is given.
pub fn attach_mcq(v: &Vignette, config: &StudyConfig, shuffle_seed: Option<u64>) -> Result<AugmentedVignette> {
    check_vignette(v)?;
    let stakeholder = config.stakeholder(&v.stakeholder_id).ok_or_else(|| Error::Unknown {
        kind: "stakeholder",
        id: v.stakeholder_id.clone(),
    })?;
    if config.bias(&v.bias_id).is_none() {
        return Err(Error::Unknown {
            kind: "bias",
            id: v.bias_id.clone(),
        });
    }
    let mut individual: Vec<McqOption> = config.harms(Scope::Individual).iter().map(McqOption::from_harm).collect();
    let mut representational: Option<Vec<McqOption>> = stakeholder
        .is_decision_subject_group
        .then(|| config.harms(Scope::Representational).iter().map(McqOption::from_harm).collect());
    if let Some(seed) = shuffle_seed {
        let mut rng = cell_rng(seed, &v.vignette_id);
        individual.shuffle(&mut rng);
        if let Some(r) = representational.as_mut() {
            r.shuffle(&mut rng);
        }
    }
    Ok(AugmentedVignette {
        vignette: v.clone(),
        individual_options: individual,
        representational_question: stakeholder
            .is_decision_subject_group
            .then(|| representational_question(stakeholder)),
        representational_options: representational,
        max_selections: config.params.max_selections,
    })
}

fn cell_rng(seed: u64, vignette_id: &str) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(vignette_id.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha20Rng::from_seed(digest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub vignette_id: String,
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusBuild {
    pub vignettes: Vec<AugmentedVignette>,
    pub failures: Vec<CellFailure>,
}

impl CorpusBuild {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Builds every (stakeholder, bias) cell. Cells are generated concurrently;
/// a failing cell is reported without aborting the others. Output order is
/// stakeholder-major in config order.
pub fn build_corpus(
    config: &StudyConfig,
    provider: &dyn Provider,
    overrides: &Overrides,
    seed: u64,
) -> Result<CorpusBuild> {
    config.validate()?;
    if config.stakeholders.is_empty() {
        return Err(Error::invalid("stakeholders", "curate stakeholders before building vignettes"));
    }
    let known: HashSet<String> = config
        .stakeholders
        .iter()
        .flat_map(|s| config.biases.iter().map(move |b| vignette_id(&config.domain, &s.id, &b.id)))
        .collect();
    if let Some(stray) = overrides.keys().find(|k| !known.contains(*k)) {
        return Err(Error::Unknown {
            kind: "vignette",
            id: stray.clone(),
        });
    }
    let cells: Vec<(&Stakeholder, &BiasType)> = config
        .stakeholders
        .iter()
        .flat_map(|s| config.biases.iter().map(move |b| (s, b)))
        .collect();
    let shuffle = config.params.shuffle_options.then_some(seed);

    let results: Vec<Result<AugmentedVignette>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cells
            .iter()
            .map(|(s, b)| {
                scope.spawn(move || {
                    let id = vignette_id(&config.domain, &s.id, &b.id);
                    let v = match overrides.get(&id) {
                        Some(o) => Vignette {
                            vignette_id: id,
                            stakeholder_id: s.id.clone(),
                            bias_id: b.id.clone(),
                            text: o.text.trim().to_string(),
                            question: o.question.clone().unwrap_or_else(|| default_question(s)),
                            provenance: VignetteProvenance::Manual,
                        },
                        None => generate_vignette(config, s, b, provider)?,
                    };
                    attach_mcq(&v, config, shuffle)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Domain("vignette worker panicked".into()))))
            .collect()
    });

    let mut build = CorpusBuild::default();
    let mut seen = HashSet::new();
    for ((s, b), r) in cells.iter().zip(results) {
        let id = vignette_id(&config.domain, &s.id, &b.id);
        match r {
            Ok(av) => {
                if !seen.insert(av.id().to_string()) {
                    return Err(Error::DuplicateId {
                        field: "vignette_id".into(),
                        id: av.id().to_string(),
                    });
                }
                build.vignettes.push(av)
            }
            Err(e) => {
                log::warn!("vignette {id} failed: {e}");
                build.failures.push(CellFailure {
                    vignette_id: id,
                    kind: e.kind().to_string(),
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(build)
}

/// Checks completeness, id uniqueness, representational gating and that
/// option lists are permutations of the configured harm lists.
pub fn validate_corpus(corpus: &[AugmentedVignette], config: &StudyConfig) -> Result<()> {
    let mut seen = HashSet::new();
    let sorted_ids = |opts: &[McqOption]| {
        let mut v: Vec<String> = opts.iter().map(|o| o.id.clone()).collect();
        v.sort();
        v
    };
    let harm_ids = |scope| {
        let mut v: Vec<String> = config.harms(scope).iter().map(|h| h.id.clone()).collect();
        v.sort();
        v
    };
    let ind = harm_ids(Scope::Individual);
    let rep = harm_ids(Scope::Representational);
    for av in corpus {
        check_vignette(&av.vignette)?;
        let v = &av.vignette;
        if v.vignette_id != vignette_id(&config.domain, &v.stakeholder_id, &v.bias_id) {
            return Err(Error::invalid(format!("vignette {}", v.vignette_id), "id does not encode its cell"));
        }
        if !seen.insert(v.vignette_id.as_str()) {
            return Err(Error::DuplicateId {
                field: "vignette_id".into(),
                id: v.vignette_id.clone(),
            });
        }
        let s = config.stakeholder(&v.stakeholder_id).ok_or_else(|| Error::Unknown {
            kind: "stakeholder",
            id: v.stakeholder_id.clone(),
        })?;
        if sorted_ids(&av.individual_options) != ind {
            return Err(Error::invalid(format!("vignette {}", v.vignette_id), "individual options differ from the taxonomy"));
        }
        match (&av.representational_options, s.is_decision_subject_group) {
            (Some(opts), true) if sorted_ids(opts) == rep => {}
            (None, false) => {}
            _ => {
                return Err(Error::invalid(
                    format!("vignette {}", v.vignette_id),
                    "representational options must be present exactly for group stakeholders",
                ))
            }
        }
        if av.max_selections == 0 {
            return Err(Error::invalid("max_selections", "must be at least 1"));
        }
    }
    let missing: Vec<String> = config
        .stakeholders
        .iter()
        .flat_map(|s| config.biases.iter().map(move |b| vignette_id(&config.domain, &s.id, &b.id)))
        .filter(|id| !seen.contains(id.as_str()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::CoverageGap(missing));
    }
    Ok(())
}

pub fn find<'a>(corpus: &'a [AugmentedVignette], id: &str) -> Result<&'a AugmentedVignette> {
    corpus.iter().find(|v| v.id() == id).ok_or_else(|| Error::Unknown {
        kind: "vignette",
        id: id.to_string(),
    })
}

pub fn corpus_to_json(corpus: &[AugmentedVignette]) -> String {
    let mut s = serde_json::to_string_pretty(corpus).expect("corpus serializes");
    s.push('\n');
    s
}

pub fn corpus_from_json(text: &str) -> Result<Vec<AugmentedVignette>> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("corpus: {e}")))
}

/// Writes `corpus.json` plus one `<vignette_id>.json` per cell into `dir`.
pub fn write_corpus(corpus: &[AugmentedVignette], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let all = dir.join("corpus.json");
    std::fs::write(&all, corpus_to_json(corpus)).map_err(|e| Error::io(&all, e))?;
    for av in corpus {
        let path = dir.join(format!("{}.json", av.id()));
        let mut text = serde_json::to_string_pretty(av).expect("vignette serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn read_corpus(dir: &Path) -> Result<Vec<AugmentedVignette>> {
    let path = dir.join("corpus.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    corpus_from_json(&text)
}

/// Plain-text questionnaire for printing or pasting into a survey tool.
pub fn survey_text(corpus: &[AugmentedVignette]) -> String {
    let mut out = String::new();
    for (i, av) in corpus.iter().enumerate() {
        let _ = writeln!(out, "=== Vignette {} ({}) ===\n", i + 1, av.id());
        let _ = writeln!(out, "{}\n", av.vignette.text);
        let _ = writeln!(out, "{} (select up to {})", av.vignette.question, av.max_selections);
        for (j, o) in av.individual_options.iter().enumerate() {
            let _ = writeln!(out, "  {}. {}: {}", j + 1, o.label, o.blurb);
        }
        if let (Some(q), Some(opts)) = (&av.representational_question, &av.representational_options) {
            let _ = writeln!(out, "\n{q} (select up to {})", av.max_selections);
            for (j, o) in opts.iter().enumerate() {
                let _ = writeln!(out, "  {}. {}: {}", j + 1, o.label, o.blurb);
            }
        }
        out.push('\n');
    }
    out
}
