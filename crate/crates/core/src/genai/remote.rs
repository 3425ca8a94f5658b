use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{PromptRequest, Provider, ProviderResponse, RateLimiter};
use crate::error::{Error, Result};

/// Environment variable holding the bearer token for [`RemoteProvider`].
pub const API_KEY_ENV: &str = "ECHO_LLM_API_KEY";

const MAX_ATTEMPTS: u32 = 3;

/// Client for an OpenAI-compatible chat-completions endpoint.
pub struct RemoteProvider {
    endpoint: String,
    model: String,
    api_key: String,
    agent: ureq::Agent,
    limiter: RateLimiter,
    backoff: Duration,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

enum Failure {
    Credential(String),
    Retryable(String),
}

impl RemoteProvider {
    /// Reads the API key from [`API_KEY_ENV`].
    pub fn from_env(endpoint: &str, model: &str, rate_limit_per_min: u32) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| Error::Credential {
            attempts: 0,
            message: format!("{API_KEY_ENV} is not set"),
        })?;
        Ok(Self::new(endpoint, model, &key, rate_limit_per_min))
    }

    pub fn new(endpoint: &str, model: &str, api_key: &str, rate_limit_per_min: u32) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteProvider {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            api_key: api_key.to_string(),
            agent,
            limiter: RateLimiter::new(rate_limit_per_min),
            backoff: Duration::from_millis(500),
        }
    }

    /// Base delay before the first retry; doubles on each further retry.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, request: &PromptRequest, prompt: &str) -> std::result::Result<(String, bool), Failure> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 401 || status == 403 {
            return Err(Failure::Credential(format!("endpoint rejected credentials (HTTP {status})")));
        }
        if !(200..300).contains(&status) {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Failure::Retryable(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())));
        }
        let parsed: Completion = resp
            .body_mut()
            .read_json()
            .map_err(|e| Failure::Retryable(format!("malformed completion: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| Failure::Retryable("completion had no choices".into()))?;
        let truncated = choice.finish_reason.as_deref() == Some("length");
        Ok((choice.message.content.unwrap_or_default(), truncated))
    }
}

impl Provider for RemoteProvider {
    fn id(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &PromptRequest, prompt: &str) -> Result<ProviderResponse> {
        let mut last = String::new();
        for attempt in 1..=MAX_ATTEMPTS {
            self.limiter.acquire();
            let start = Instant::now();
            match self.attempt(request, prompt) {
                Ok((text, truncated)) => {
                    return Ok(ProviderResponse {
                        text,
                        provider_id: self.model.clone(),
                        latency_ms: start.elapsed().as_millis() as u64,
                        truncated,
                    })
                }
                Err(Failure::Credential(message)) => {
                    return Err(Error::Credential { attempts: attempt, message })
                }
                Err(Failure::Retryable(message)) => {
                    log::warn!("attempt {attempt}/{MAX_ATTEMPTS} failed: {message}");
                    last = message;
                    if attempt < MAX_ATTEMPTS {
                        std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
                    }
                }
            }
        }
        Err(Error::Provider {
            attempts: MAX_ATTEMPTS,
            message: last,
        })
    }
}
