//! Uniform chat-completion gateway.
//!
//! One request shape ([`ChatRequest`]) is served by interchangeable backends:
//! live HTTP providers ([`http::HttpBackend`]) or a deterministic scripted
//! backend that replays fixture files ([`scripted::ScriptedBackend`]). The
//! [`Gateway`] wraps whichever backend with retry-with-backoff, an optional
//! content-addressed disk cache, a bounded in-flight limit, and per-call
//! audit records carrying token counts and cost.

pub mod cache;
pub mod http;
pub mod ledger;
pub mod scripted;

use std::collections::HashSet;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use http::{load_provider_config, ApiStyle, HttpBackend, ProviderConfig, ProviderProfile};
pub use ledger::{estimate_cost, Money, Pricing, RequestUsage, UsageLedger, UsageRollup};
pub use scripted::ScriptedBackend;

/// Errors from backends and the gateway policy layer.
#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("authentication failed for provider '{provider}': {detail}")]
    Auth { provider: String, detail: String },
    #[error("provider '{provider}' rate-limited the request: {detail}")]
    RateLimited { provider: String, detail: String },
    #[error("request to provider '{provider}' timed out")]
    Timeout { provider: String },
    #[error("transport failure talking to provider '{provider}': {detail}")]
    Transport { provider: String, detail: String },
    #[error("provider '{provider}' returned server error {status}: {detail}")]
    ServerError {
        provider: String,
        status: u16,
        detail: String,
    },
    #[error("provider '{provider}' returned HTTP {status}: {detail}")]
    Http {
        provider: String,
        status: u16,
        detail: String,
    },
    #[error("could not interpret provider '{provider}' payload: {detail}")]
    MalformedPayload { provider: String, detail: String },
    #[error("no fixture for request: tried '{tag_file}' and digest '{digest_file}'")]
    FixtureMissing {
        tag_file: String,
        digest_file: String,
    },
    #[error("request tag '{tag}' was already used in this run")]
    DuplicateTag { tag: String },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted {
        attempts: u32,
        #[source]
        last: Box<GatewayError>,
    },
    #[error("gateway configuration error: {detail}")]
    Config { detail: String },
}

impl GatewayError {
    /// Whether the retry policy may re-issue the request.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            GatewayError::RateLimited { .. }
                | GatewayError::Timeout { .. }
                | GatewayError::Transport { .. }
                | GatewayError::ServerError { .. }
        )
    }
}

/// A single-turn instruction for a chat model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub instruction: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Stable identifier `stage:essay_id[:agent][:rN]`; must be unique within
    /// a run. Names fixture files and audit entries.
    pub request_tag: String,
}

/// A completed chat response.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency: Duration,
    pub provider_id: String,
}

/// Retry-with-exponential-backoff settings: attempt `n` (0-based) sleeps
/// `backoff_base × 2ⁿ` before retrying.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
        }
    }
}

/// Anything that can answer a [`ChatRequest`].
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
    fn provider_id(&self) -> &str;
}

/// Content digest identifying a request for caching and fixture fallback:
/// sha256 over model id, temperature, and instruction.
pub fn content_digest(model_id: &str, temperature: f64, instruction: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model_id.as_bytes());
    hasher.update(b"\n");
    hasher.update(temperature.to_string().as_bytes());
    hasher.update(b"\n");
    hasher.update(instruction.as_bytes());
    hex::encode(hasher.finalize())
}

/// Splits a request tag into its stage name and essay id, when present.
pub fn parse_tag(tag: &str) -> (String, Option<u64>) {
    let mut parts = tag.split(':');
    let stage = parts.next().unwrap_or_default().to_string();
    let essay_id = parts.next().and_then(|s| s.parse().ok());
    (stage, essay_id)
}

/// One line of the per-run audit log: the full story of one gateway call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub request_tag: String,
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub essay_id: Option<u64>,
    pub model_id: String,
    pub temperature: f64,
    pub content_digest: String,
    pub attempts: u32,
    pub cache_hit: bool,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    pub cost_micro_usd: Money,
    pub provider_id: String,
}

impl CallRecord {
    /// Accounting view of a successful call.
    pub fn usage(&self) -> Option<RequestUsage> {
        if !self.ok {
            return None;
        }
        Some(RequestUsage {
            request_tag: self.request_tag.clone(),
            essay_id: self.essay_id,
            prompt_tokens: self.prompt_tokens,
            completion_tokens: self.completion_tokens,
            cost_micro_usd: self.cost_micro_usd,
            latency_ms: self.latency_ms,
        })
    }
}

/// Result of [`Gateway::call`]: the response (or error) plus its audit record.
#[derive(Debug)]
pub struct CallOutcome {
    pub result: Result<ChatResponse, GatewayError>,
    pub record: CallRecord,
}

/// Minimal counting semaphore; bounds concurrent backend calls.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.semaphore.permits.lock().unwrap() += 1;
        self.semaphore.available.notify_one();
    }
}

/// Gateway construction options.
pub struct GatewayOptions {
    pub retry: RetryPolicy,
    pub pricing: Pricing,
    /// Enables the content-addressed response cache when set.
    pub cache_dir: Option<std::path::PathBuf>,
    /// Bound on concurrent in-flight backend calls.
    pub max_in_flight: usize,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        Self {
            retry: RetryPolicy::default(),
            pricing: Pricing::FREE,
            cache_dir: None,
            max_in_flight: 4,
        }
    }
}

/// Policy wrapper around a [`ChatBackend`]: retries, caching, in-flight
/// bounding, duplicate-tag detection, cost accounting, audit records.
pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    retry: RetryPolicy,
    pricing: Pricing,
    cache: Option<cache::DiskCache>,
    semaphore: Semaphore,
    seen_tags: Mutex<HashSet<String>>,
    totals: Mutex<UsageRollup>,
}

impl Gateway {
    pub fn new(backend: Box<dyn ChatBackend>, options: GatewayOptions) -> Self {
        Self {
            backend,
            retry: options.retry,
            pricing: options.pricing,
            cache: options.cache_dir.map(cache::DiskCache::new),
            semaphore: Semaphore::new(options.max_in_flight),
            seen_tags: Mutex::new(HashSet::new()),
            totals: Mutex::new(UsageRollup::default()),
        }
    }

    pub fn pricing(&self) -> Pricing {
        self.pricing
    }

    /// Usage accumulated across all successful calls so far.
    pub fn run_totals(&self) -> UsageRollup {
        *self.totals.lock().unwrap()
    }

    /// Issues a request under the gateway policy. Always produces an audit
    /// record, success or failure.
    pub fn call(&self, request: &ChatRequest) -> CallOutcome {
        let (stage, essay_id) = parse_tag(&request.request_tag);
        let digest = content_digest(&request.model_id, request.temperature, &request.instruction);
        let mut record = CallRecord {
            request_tag: request.request_tag.clone(),
            stage,
            essay_id,
            model_id: request.model_id.clone(),
            temperature: request.temperature,
            content_digest: digest.clone(),
            attempts: 0,
            cache_hit: false,
            ok: false,
            error: None,
            prompt_tokens: 0,
            completion_tokens: 0,
            latency_ms: 0,
            cost_micro_usd: Money::ZERO,
            provider_id: self.backend.provider_id().to_string(),
        };

        {
            let mut seen = self.seen_tags.lock().unwrap();
            if !seen.insert(request.request_tag.clone()) {
                let err = GatewayError::DuplicateTag {
                    tag: request.request_tag.clone(),
                };
                record.error = Some(err.to_string());
                return CallOutcome {
                    result: Err(err),
                    record,
                };
            }
        }

        let _permit = self.semaphore.acquire();

        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&digest) {
                let response = ChatResponse {
                    text: hit.text,
                    prompt_tokens: hit.prompt_tokens,
                    completion_tokens: hit.completion_tokens,
                    latency: Duration::ZERO,
                    provider_id: hit.provider_id,
                };
                self.finish_ok(&mut record, &response, 0, true);
                return CallOutcome {
                    result: Ok(response),
                    record,
                };
            }
        }

        let mut attempt: u32 = 0;
        loop {
            match self.backend.complete(request) {
                Ok(response) => {
                    if let Some(cache) = &self.cache {
                        cache.put(&digest, &response);
                    }
                    self.finish_ok(&mut record, &response, attempt + 1, false);
                    return CallOutcome {
                        result: Ok(response),
                        record,
                    };
                }
                Err(err) if err.is_retryable() && attempt < self.retry.max_retries => {
                    std::thread::sleep(self.retry.backoff_base * 2u32.pow(attempt));
                    attempt += 1;
                }
                Err(err) => {
                    let attempts = attempt + 1;
                    let terminal = if err.is_retryable() {
                        GatewayError::RetriesExhausted {
                            attempts,
                            last: Box::new(err),
                        }
                    } else {
                        err
                    };
                    record.attempts = attempts;
                    record.error = Some(terminal.to_string());
                    return CallOutcome {
                        result: Err(terminal),
                        record,
                    };
                }
            }
        }
    }

    fn finish_ok(
        &self,
        record: &mut CallRecord,
        response: &ChatResponse,
        attempts: u32,
        cache_hit: bool,
    ) {
        record.attempts = attempts;
        record.cache_hit = cache_hit;
        record.ok = true;
        record.prompt_tokens = response.prompt_tokens;
        record.completion_tokens = response.completion_tokens;
        record.latency_ms = response.latency.as_millis() as u64;
        record.cost_micro_usd = estimate_cost(
            response.prompt_tokens,
            response.completion_tokens,
            self.pricing,
        );
        if let Some(usage) = record.usage() {
            let mut totals = self.totals.lock().unwrap();
            totals.absorb(&usage);
        }
    }
}
