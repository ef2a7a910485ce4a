//! Live HTTP backend for OpenAI- and Anthropic-style chat APIs.
//!
//! Providers are described by a JSON config file rather than compiled-in
//! constants, so pointing a run at a different endpoint, model host, or
//! price sheet needs no code change:
//!
//! ```json
//! {
//!   "providers": [
//!     {
//!       "provider_id": "openai",
//!       "endpoint": "https://api.openai.com/v1/chat/completions",
//!       "auth_env_var": "OPENAI_API_KEY",
//!       "api": "openai",
//!       "price_per_1k_prompt_tokens_usd": 0.0004,
//!       "price_per_1k_completion_tokens_usd": 0.0016
//!     }
//!   ]
//! }
//! ```
//!
//! API keys are read from the named environment variable only — they never
//! appear on the command line or in config files.

use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::ledger::Pricing;
use super::{ChatBackend, ChatRequest, ChatResponse, GatewayError};

/// Request/response dialect spoken by a provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApiStyle {
    OpenAi,
    Anthropic,
}

/// On-disk shape of one provider entry.
#[derive(Debug, Clone, Deserialize)]
struct RawProfile {
    provider_id: String,
    endpoint: String,
    auth_env_var: String,
    #[serde(default)]
    api: Option<ApiStyle>,
    #[serde(default)]
    price_per_1k_prompt_tokens_usd: f64,
    #[serde(default)]
    price_per_1k_completion_tokens_usd: f64,
    #[serde(default)]
    max_retries: Option<u32>,
    #[serde(default)]
    backoff_base_ms: Option<u64>,
    #[serde(default)]
    request_timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawConfig {
    providers: Vec<RawProfile>,
}

/// Validated provider description.
#[derive(Debug, Clone)]
pub struct ProviderProfile {
    pub provider_id: String,
    pub endpoint: String,
    pub auth_env_var: String,
    pub api: ApiStyle,
    pub pricing: Pricing,
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub request_timeout: Duration,
}

impl ProviderProfile {
    fn from_raw(raw: RawProfile) -> Result<Self, GatewayError> {
        if raw.provider_id.is_empty() || raw.endpoint.is_empty() || raw.auth_env_var.is_empty() {
            return Err(GatewayError::Config {
                detail: "provider entries need provider_id, endpoint, and auth_env_var".into(),
            });
        }
        let api = raw.api.unwrap_or_else(|| {
            let id = raw.provider_id.to_ascii_lowercase();
            if id.contains("anthropic") || id.contains("claude") {
                ApiStyle::Anthropic
            } else {
                ApiStyle::OpenAi
            }
        });
        Ok(Self {
            provider_id: raw.provider_id,
            endpoint: raw.endpoint,
            auth_env_var: raw.auth_env_var,
            api,
            pricing: Pricing::from_usd_per_1k(
                raw.price_per_1k_prompt_tokens_usd,
                raw.price_per_1k_completion_tokens_usd,
            ),
            max_retries: raw.max_retries.unwrap_or(3),
            backoff_base: Duration::from_millis(raw.backoff_base_ms.unwrap_or(500)),
            request_timeout: Duration::from_secs(raw.request_timeout_secs.unwrap_or(120)),
        })
    }
}

/// The full provider config file.
#[derive(Debug, Clone)]
pub struct ProviderConfig {
    pub profiles: Vec<ProviderProfile>,
}

impl ProviderConfig {
    /// Picks a provider by id, or the first entry when `None`.
    pub fn profile(&self, provider_id: Option<&str>) -> Result<&ProviderProfile, GatewayError> {
        match provider_id {
            None => self.profiles.first().ok_or_else(|| GatewayError::Config {
                detail: "provider config lists no providers".into(),
            }),
            Some(id) => self
                .profiles
                .iter()
                .find(|p| p.provider_id == id)
                .ok_or_else(|| GatewayError::Config {
                    detail: format!(
                        "provider '{id}' not found; available: {}",
                        self.profiles
                            .iter()
                            .map(|p| p.provider_id.as_str())
                            .collect::<Vec<_>>()
                            .join(", ")
                    ),
                }),
        }
    }
}

/// Reads and validates a provider config file.
pub fn load_provider_config(path: &Path) -> Result<ProviderConfig, GatewayError> {
    let text = std::fs::read_to_string(path).map_err(|e| GatewayError::Config {
        detail: format!("cannot read provider config {}: {e}", path.display()),
    })?;
    let raw: RawConfig = serde_json::from_str(&text).map_err(|e| GatewayError::Config {
        detail: format!("cannot parse provider config {}: {e}", path.display()),
    })?;
    let profiles = raw
        .providers
        .into_iter()
        .map(ProviderProfile::from_raw)
        .collect::<Result<Vec<_>, _>>()?;
    if profiles.is_empty() {
        return Err(GatewayError::Config {
            detail: "provider config lists no providers".into(),
        });
    }
    Ok(ProviderConfig { profiles })
}

/// Blocking HTTP chat backend for one provider.
pub struct HttpBackend {
    profile: ProviderProfile,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(profile: ProviderProfile) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(profile.request_timeout)
            .build()
            .map_err(|e| GatewayError::Config {
                detail: format!("cannot build HTTP client: {e}"),
            })?;
        Ok(Self { profile, client })
    }

    pub fn profile(&self) -> &ProviderProfile {
        &self.profile
    }

    fn api_key(&self) -> Result<String, GatewayError> {
        std::env::var(&self.profile.auth_env_var).map_err(|_| GatewayError::Auth {
            provider: self.profile.provider_id.clone(),
            detail: format!(
                "environment variable {} is not set",
                self.profile.auth_env_var
            ),
        })
    }

    fn build_body(&self, request: &ChatRequest) -> Value {
        match self.profile.api {
            ApiStyle::OpenAi => json!({
                "model": request.model_id,
                "messages": [{"role": "user", "content": request.instruction}],
                "temperature": request.temperature,
                "max_tokens": request.max_output_tokens,
            }),
            ApiStyle::Anthropic => json!({
                "model": request.model_id,
                "max_tokens": request.max_output_tokens,
                "temperature": request.temperature,
                "messages": [{"role": "user", "content": request.instruction}],
            }),
        }
    }

    fn classify_status(&self, status: u16, body: &str) -> GatewayError {
        let provider = self.profile.provider_id.clone();
        let detail = body.chars().take(400).collect::<String>();
        match status {
            401 | 403 => GatewayError::Auth { provider, detail },
            429 => GatewayError::RateLimited { provider, detail },
            408 => GatewayError::ServerError {
                provider,
                status,
                detail,
            },
            500..=599 => GatewayError::ServerError {
                provider,
                status,
                detail,
            },
            _ => GatewayError::Http {
                provider,
                status,
                detail,
            },
        }
    }

    fn classify_transport(&self, err: reqwest::Error) -> GatewayError {
        let provider = self.profile.provider_id.clone();
        if err.is_timeout() {
            GatewayError::Timeout { provider }
        } else {
            GatewayError::Transport {
                provider,
                detail: err.to_string(),
            }
        }
    }

    fn malformed(&self, detail: impl Into<String>) -> GatewayError {
        GatewayError::MalformedPayload {
            provider: self.profile.provider_id.clone(),
            detail: detail.into(),
        }
    }

    fn parse_openai(&self, body: &Value) -> Result<(String, u64, u64), GatewayError> {
        let text = body
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| self.malformed("missing choices[0].message.content"))?
            .to_string();
        let prompt_tokens = body
            .pointer("/usage/prompt_tokens")
            .and_then(Value::as_u64)
            .ok_or_else(|| self.malformed("missing usage.prompt_tokens"))?;
        let completion_tokens = body
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .ok_or_else(|| self.malformed("missing usage.completion_tokens"))?;
        Ok((text, prompt_tokens, completion_tokens))
    }

    fn parse_anthropic(&self, body: &Value) -> Result<(String, u64, u64), GatewayError> {
        let blocks = body
            .get("content")
            .and_then(Value::as_array)
            .ok_or_else(|| self.malformed("missing content array"))?;
        let text: String = blocks
            .iter()
            .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
            .filter_map(|b| b.get("text").and_then(Value::as_str))
            .collect();
        if text.is_empty() {
            return Err(self.malformed("no text blocks in content"));
        }
        let prompt_tokens = body
            .pointer("/usage/input_tokens")
            .and_then(Value::as_u64)
            .ok_or_else(|| self.malformed("missing usage.input_tokens"))?;
        let completion_tokens = body
            .pointer("/usage/output_tokens")
            .and_then(Value::as_u64)
            .ok_or_else(|| self.malformed("missing usage.output_tokens"))?;
        Ok((text, prompt_tokens, completion_tokens))
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        // Check credentials before touching the network: a missing key is a
        // configuration problem, not a transport one.
        let key = self.api_key()?;
        let body = self.build_body(request);

        let builder = self.client.post(&self.profile.endpoint).json(&body);
        let builder = match self.profile.api {
            ApiStyle::OpenAi => builder.bearer_auth(&key),
            ApiStyle::Anthropic => builder
                .header("x-api-key", &key)
                .header("anthropic-version", "2023-06-01"),
        };

        let started = Instant::now();
        let response = builder.send().map_err(|e| self.classify_transport(e))?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| self.classify_transport(e))?;
        let latency = started.elapsed();

        if !(200..300).contains(&status) {
            return Err(self.classify_status(status, &text));
        }

        let parsed: Value = serde_json::from_str(&text)
            .map_err(|e| self.malformed(format!("response is not JSON: {e}")))?;
        let (text, prompt_tokens, completion_tokens) = match self.profile.api {
            ApiStyle::OpenAi => self.parse_openai(&parsed)?,
            ApiStyle::Anthropic => self.parse_anthropic(&parsed)?,
        };

        Ok(ChatResponse {
            text,
            prompt_tokens,
            completion_tokens,
            latency,
            provider_id: self.profile.provider_id.clone(),
        })
    }

    fn provider_id(&self) -> &str {
        &self.profile.provider_id
    }
}
