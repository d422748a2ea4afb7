//! HTTP backend for chat-completions style endpoints.

use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::{Backend, BackendError, CallCounter, CompletionRequest, CompletionResponse, DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_MODEL};

pub const ENV_API_KEY: &str = "P2C_API_KEY";
pub const ENV_BASE_URL: &str = "P2C_BASE_URL";
pub const ENV_MODEL: &str = "P2C_MODEL";

const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

/// Backend configuration as read from the JSON config file.
///
/// Environment variables override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApiConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub concurrency: usize,
    pub fixture_dir: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
}

impl Default for ApiConfig {
    fn default() -> Self {
        ApiConfig {
            base_url: DEFAULT_BASE_URL.to_string(),
            model: DEFAULT_MODEL.to_string(),
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            concurrency: 4,
            fixture_dir: None,
            api_key: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("no API credential: set {ENV_API_KEY} or `api_key` in the config file")]
    MissingCredential,
    #[error("invalid config value: {0}")]
    Invalid(String),
    #[error("cannot build HTTP client: {0}")]
    Client(String),
}

impl ApiConfig {
    /// Reads the config file (if any) and then applies the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok());
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.display().to_string(), source })
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        if let Some(key) = lookup(ENV_API_KEY).filter(|k| !k.is_empty()) {
            self.api_key = Some(key);
        }
        if let Some(url) = lookup(ENV_BASE_URL).filter(|k| !k.is_empty()) {
            self.base_url = url;
        }
        if let Some(model) = lookup(ENV_MODEL).filter(|k| !k.is_empty()) {
            self.model = model;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ConfigError::Invalid(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_output_tokens == 0 {
            return Err(ConfigError::Invalid("max_output_tokens must be positive".into()));
        }
        if self.concurrency == 0 {
            return Err(ConfigError::Invalid("concurrency must be positive".into()));
        }
        if self.model.is_empty() {
            return Err(ConfigError::Invalid("model must not be empty".into()));
        }
        Ok(())
    }
}

/// Retries apply to timeouts and HTTP 429 only; delays double from `base_delay`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub request_timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, base_delay: Duration::from_secs(1), request_timeout: Duration::from_secs(120) }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): 1s, 2s, 4s with the defaults.
    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry.saturating_sub(1))
    }
}

struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().expect("in-flight lock poisoned");
        while *active >= self.limit {
            active = self.freed.wait(active).expect("in-flight lock poisoned");
        }
        *active += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().expect("in-flight lock poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct LiveBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    model: String,
    retry: RetryPolicy,
    in_flight: InFlight,
    calls: CallCounter,
    network_calls: CallCounter,
}

impl LiveBackend {
    /// Fails before any network traffic when no credential is configured.
    pub fn new(config: &ApiConfig, retry: RetryPolicy) -> Result<Self, ConfigError> {
        config.validate()?;
        let api_key = config.api_key.clone().filter(|k| !k.is_empty()).ok_or(ConfigError::MissingCredential)?;
        let client = reqwest::blocking::Client::builder()
            .timeout(retry.request_timeout)
            .build()
            .map_err(|e| ConfigError::Client(e.to_string()))?;
        Ok(LiveBackend {
            client,
            endpoint: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key,
            model: config.model.clone(),
            retry,
            in_flight: InFlight { limit: config.concurrency, active: Mutex::new(0), freed: Condvar::new() },
            calls: CallCounter::default(),
            network_calls: CallCounter::default(),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn send_once(&self, request: &CompletionRequest) -> Result<reqwest::blocking::Response, reqwest::Error> {
        let _slot = self.in_flight.acquire();
        self.network_calls.bump();
        let body = json!({
            "model": request.model_id,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        self.client.post(&self.endpoint).bearer_auth(&self.api_key).json(&body).send()
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl Backend for LiveBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        self.calls.bump();
        request.validate()?;
        let started = Instant::now();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let retryable = match self.send_once(request) {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    match status {
                        200..=299 => {
                            let parsed: ChatResponse =
                                resp.json().map_err(|e| BackendError::BadResponse(e.to_string()))?;
                            let text = parsed
                                .choices
                                .into_iter()
                                .next()
                                .and_then(|c| c.message.content)
                                .ok_or_else(|| BackendError::BadResponse("no message content in choices[0]".into()))?;
                            return Ok(CompletionResponse {
                                text,
                                backend_id: format!("live:{}", self.model),
                                latency_ms: started.elapsed().as_millis() as u64,
                            });
                        }
                        401 | 403 => {
                            return Err(BackendError::Authentication { endpoint: self.endpoint.clone(), status })
                        }
                        429 => BackendError::RateLimitExhausted { attempts: attempt },
                        _ => {
                            let body = resp.text().unwrap_or_default();
                            return Err(BackendError::Http { endpoint: self.endpoint.clone(), status, body });
                        }
                    }
                }
                Err(e) if e.is_timeout() => BackendError::Timeout { attempts: attempt },
                Err(e) => return Err(BackendError::Network(e.to_string())),
            };

            if attempt > self.retry.max_retries {
                return Err(retryable);
            }
            let delay = self.retry.delay(attempt);
            log::warn!("{retryable}; retrying in {:.1}s", delay.as_secs_f64());
            std::thread::sleep(delay);
        }
    }

    fn id(&self) -> String {
        format!("live:{}", self.model)
    }

    fn calls(&self) -> u64 {
        self.calls.get()
    }

    fn network_calls(&self) -> u64 {
        self.network_calls.get()
    }
}
