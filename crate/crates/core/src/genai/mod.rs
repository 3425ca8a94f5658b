//! Text-generation gateway: prompt templates, a deterministic mock provider
//! and an HTTP chat-completion client.

mod mock;
mod ratelimit;
mod remote;
mod template;

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mock::MockProvider;
pub use ratelimit::RateLimiter;
pub use remote::{RemoteProvider, API_KEY_ENV};
pub use template::{render_template, template_text, template_variables, TEMPLATE_IDS};

/// Sampling temperature for stakeholder and vignette generation.
pub const GENERATION_TEMPERATURE: f64 = 0.7;
/// Sampling temperature for annotation calls.
pub const ANNOTATION_TEMPERATURE: f64 = 0.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub template_id: String,
    pub variables: BTreeMap<String, String>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl PromptRequest {
    pub fn new<K, V>(template_id: &str, variables: impl IntoIterator<Item = (K, V)>) -> Self
    where
        K: Into<String>,
        V: Into<String>,
    {
        PromptRequest {
            template_id: template_id.to_string(),
            variables: variables
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
            temperature: GENERATION_TEMPERATURE,
            max_output_tokens: 1024,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::invalid("temperature", "must be finite and non-negative"));
        }
        if self.max_output_tokens == 0 {
            return Err(Error::invalid("max_output_tokens", "must be positive"));
        }
        for var in template_variables(&self.template_id)? {
            if !self.variables.contains_key(&var) {
                return Err(Error::MissingVariable {
                    template: self.template_id.clone(),
                    variable: var,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub text: String,
    pub provider_id: String,
    pub latency_ms: u64,
    pub truncated: bool,
}

/// A text-generation backend. `prompt` is the rendered template text.
pub trait Provider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &PromptRequest, prompt: &str) -> Result<ProviderResponse>;
}

/// Renders the request's template and sends it to `provider`.
pub fn generate(request: &PromptRequest, provider: &dyn Provider) -> Result<ProviderResponse> {
    request.validate()?;
    let prompt = render_template(&request.template_id, &request.variables)?;
    let response = provider.complete(request, &prompt)?;
    if response.truncated {
        log::warn!(
            "{} response for template `{}` was truncated",
            response.provider_id,
            request.template_id
        );
    }
    if response.text.trim().is_empty() {
        return Err(Error::Provider {
            attempts: 1,
            message: "provider returned empty text".into(),
        });
    }
    Ok(response)
}

/// Replays canned responses in order; the last one repeats once exhausted.
/// Records every prompt it receives.
pub struct ScriptedProvider {
    responses: Vec<String>,
    seen: Mutex<Vec<(PromptRequest, String)>>,
}

impl ScriptedProvider {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        ScriptedProvider {
            responses: responses.into_iter().map(Into::into).collect(),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<(PromptRequest, String)> {
        self.seen.lock().unwrap().clone()
    }
}

impl Provider for ScriptedProvider {
    fn id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &PromptRequest, prompt: &str) -> Result<ProviderResponse> {
        let mut seen = self.seen.lock().unwrap();
        let idx = seen.len().min(self.responses.len().saturating_sub(1));
        seen.push((request.clone(), prompt.to_string()));
        let text = self.responses.get(idx).cloned().unwrap_or_default();
        Ok(ProviderResponse {
            text,
            provider_id: "scripted".into(),
            latency_ms: 0,
            truncated: false,
        })
    }
}
