//! Language-model backends.
//!
//! Every backend answers a [`CompletionRequest`] with a
//! [`CompletionResponse`]. The live backend talks to a chat-completions HTTP
//! endpoint; the replay backend looks responses up in a fixture store keyed by
//! the request's content hash, so analyses can be rerun without a network.

mod hash;
mod live;
mod replay;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hash::request_hash;
pub use live::{ApiConfig, ConfigError, LiveBackend, RetryPolicy, ENV_API_KEY, ENV_BASE_URL, ENV_MODEL};
pub use replay::{Fixture, FixtureStore, RecordingBackend, ReplayBackend};

pub const DEFAULT_MODEL: &str = "gpt-4";
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_text: String,
    pub user_text: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl CompletionRequest {
    /// Request with temperature 0 and the default output budget.
    pub fn new(system_text: impl Into<String>, user_text: impl Into<String>, model_id: impl Into<String>) -> Self {
        CompletionRequest {
            system_text: system_text.into(),
            user_text: user_text.into(),
            model_id: model_id.into(),
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.user_text.is_empty() {
            return Err(BackendError::InvalidRequest("user_text is empty".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_output_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        request_hash(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    /// Model output, untrimmed.
    pub text: String,
    pub backend_id: String,
    pub latency_ms: u64,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication rejected by {endpoint} (HTTP {status})")]
    Authentication { endpoint: String, status: u16 },
    #[error("rate limited after {attempts} attempts")]
    RateLimitExhausted { attempts: u32 },
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("HTTP {status} from {endpoint}: {body}")]
    Http { endpoint: String, status: u16, body: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("unexpected response shape: {0}")]
    BadResponse(String),
    #[error("no fixture recorded for request {hash}")]
    MissingFixture { hash: String },
    #[error("fixture store error: {0}")]
    Store(String),
}

/// A completion backend.
///
/// Implementations are shared across worker threads.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError>;

    /// Short identifier recorded in run manifests.
    fn id(&self) -> String;

    /// Completed `complete` invocations, successful or not.
    fn calls(&self) -> u64;

    /// HTTP requests actually sent. Zero for offline backends.
    fn network_calls(&self) -> u64 {
        0
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(request)
    }
    fn id(&self) -> String {
        (**self).id()
    }
    fn calls(&self) -> u64 {
        (**self).calls()
    }
    fn network_calls(&self) -> u64 {
        (**self).network_calls()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(request)
    }
    fn id(&self) -> String {
        (**self).id()
    }
    fn calls(&self) -> u64 {
        (**self).calls()
    }
    fn network_calls(&self) -> u64 {
        (**self).network_calls()
    }
}

#[derive(Debug, Default)]
pub(crate) struct CallCounter(AtomicU64);

impl CallCounter {
    pub(crate) fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// How a run obtains completions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Live,
    #[default]
    Replay,
    Record,
}

impl fmt::Display for BackendMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendMode::Live => "live",
            BackendMode::Replay => "replay",
            BackendMode::Record => "record",
        })
    }
}

impl std::str::FromStr for BackendMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(BackendMode::Live),
            "replay" => Ok(BackendMode::Replay),
            "record" => Ok(BackendMode::Record),
            other => Err(format!("unknown backend mode {other:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_defaults() {
        let r = CompletionRequest::new("sys", "user", "m");
        assert_eq!(r.temperature, 0.0);
        assert!(r.validate().is_ok());
    }

    #[test]
    fn request_validation() {
        assert!(CompletionRequest::new("s", "", "m").validate().is_err());
        let mut r = CompletionRequest::new("s", "u", "m");
        r.temperature = 2.5;
        assert!(r.validate().is_err());
        r.temperature = 2.0;
        r.max_output_tokens = 0;
        assert!(r.validate().is_err());
    }
}
