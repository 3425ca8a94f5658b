use std::collections::BTreeMap;
use std::sync::OnceLock;

use sha2::{Digest, Sha256};

use super::{PromptRequest, Provider, ProviderResponse};
use crate::error::{Error, Result};

const HIRING_STAKEHOLDERS: &str = include_str!("../../data/mock/stakeholders_hiring.txt");
const DIAGNOSIS_STAKEHOLDERS: &str = include_str!("../../data/mock/stakeholders_diagnosis.txt");
const SCENARIOS: &str = include_str!("../../data/mock/scenarios.json");

fn scenarios() -> &'static BTreeMap<String, String> {
    static CELL: OnceLock<BTreeMap<String, String>> = OnceLock::new();
    CELL.get_or_init(|| serde_json::from_str(SCENARIOS).expect("bundled scenarios parse"))
}

/// Offline provider whose output is a pure function of
/// `(template_id, variables, seed)`.
///
/// Bundled domains get canned stakeholder lists and scenarios; other domains
/// get generic text. Annotation prompts are answered with one or two option
/// ids chosen by hashing the request.
#[derive(Clone, Debug)]
pub struct MockProvider {
    seed: u64,
}

impl MockProvider {
    pub fn new(seed: u64) -> Self {
        MockProvider { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn digest(&self, request: &PromptRequest) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(request.template_id.as_bytes());
        for (k, v) in &request.variables {
            h.update([0u8]);
            h.update(k.as_bytes());
            h.update([1u8]);
            h.update(v.as_bytes());
        }
        h.update(self.seed.to_le_bytes());
        h.finalize().into()
    }

    fn var<'a>(request: &'a PromptRequest, name: &str) -> Result<&'a str> {
        request
            .variables
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| Error::MissingVariable {
                template: request.template_id.clone(),
                variable: name.to_string(),
            })
    }

    fn stakeholders(domain: &str) -> String {
        match domain.trim().to_lowercase().as_str() {
            "hiring" => HIRING_STAKEHOLDERS.to_string(),
            "diagnosis" | "disease diagnosis" => DIAGNOSIS_STAKEHOLDERS.to_string(),
            other => format!(
                "Active Stakeholders\n\
                 1. [deployer] Organization deploying the {other} system -- Decides to adopt the system and how it is used.\n\
                 2. [developer] AI system developers / vendors -- Build and train the system.\n\
                 3. [operators] Staff operating the system -- Act on its outputs day to day.\n\
                 \n\
                 Passive Stakeholders\n\
                 1. [decision-subject] People assessed by the system -- Directly affected by its decisions.\n\
                 2. [decision-subject-group] Members of historically marginalized groups <group> -- May face disproportionate harms.\n\
                 3. [society] Society at large -- Affected indirectly by the system's aggregate effects.\n"
            ),
        }
    }

    fn scenario(domain: &str, bias: &str) -> String {
        let key = format!("{}/{}", domain.trim().to_lowercase(), bias);
        if let Some(text) = scenarios().get(&key) {
            return text.clone();
        }
        let problem = match bias {
            "representation" => "it was trained on records that mostly describe one kind of person, so people who look different from that profile are often judged wrongly",
            "measurement" => "it relies on an easy-to-collect number as a stand-in for what really matters, and that number means different things for different people",
            "algorithmic" => "its formula is too simple to capture how different factors interact, so unusual but valid cases are judged wrongly",
            "evaluation" => "it was only tested on data from one narrow setting, so nobody noticed that it performs poorly elsewhere",
            "deployment" => "it was designed to assist people but is now used on its own, with nobody checking its decisions",
            other => return format!(
                "An organization in the {domain} domain uses an AI system to support its decisions. The system suffers from {other} bias, and as a result some people receive worse outcomes than others."
            ),
        };
        format!(
            "An organization in the {domain} domain uses an AI system to support its decisions. However, {problem}. As a result, some people receive worse outcomes than others, even when their situations are the same."
        )
    }

    fn annotate(&self, request: &PromptRequest) -> Result<String> {
        let options: Vec<&str> = Self::var(request, "options")?
            .lines()
            .filter_map(|l| l.split_once(':').map(|(id, _)| id.trim()))
            .filter(|id| !id.is_empty())
            .collect();
        if options.is_empty() {
            return Ok("I cannot answer this question.".into());
        }
        let max: usize = Self::var(request, "max_selections")?.trim().parse().unwrap_or(1).max(1);
        let d = self.digest(request);
        let want = (1 + d[0] as usize % 2).min(max).min(options.len());
        let mut picked: Vec<&str> = Vec::new();
        let mut i = 1;
        while picked.len() < want {
            let idx = u16::from_le_bytes([d[i % 32], d[(i + 1) % 32]]) as usize % options.len();
            if !picked.contains(&options[idx]) {
                picked.push(options[idx]);
            }
            i += 2;
            if i > 64 {
                // Exhausted the digest; fill deterministically.
                for o in &options {
                    if picked.len() == want {
                        break;
                    }
                    if !picked.contains(o) {
                        picked.push(o);
                    }
                }
            }
        }
        Ok(picked.join("\n"))
    }
}

impl Provider for MockProvider {
    fn id(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &PromptRequest, _prompt: &str) -> Result<ProviderResponse> {
        let text = match request.template_id.as_str() {
            "stakeholders" => Self::stakeholders(Self::var(request, "domain")?),
            "vignette" => {
                let domain = Self::var(request, "domain")?;
                let bias = Self::var(request, "bias")?;
                let who = Self::var(request, "stakeholder")?;
                format!(
                    "{}\n\nIf you were {who}, which of the following harms do you think you would personally most likely face?",
                    Self::scenario(domain, bias)
                )
            }
            "annotate" => self.annotate(request)?,
            other => return Err(Error::UnknownTemplate(other.to_string())),
        };
        Ok(ProviderResponse {
            text,
            provider_id: "mock".into(),
            latency_ms: 0,
            truncated: false,
        })
    }
}
