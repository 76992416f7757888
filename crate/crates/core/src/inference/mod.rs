//! Text-completion backends with schema-validated structured output.
//!
//! Every call goes through [`classify_call`]: the backend's raw text is
//! parsed and validated against the request's schema, and invalid text is
//! re-prompted with a correction suffix until `max_retries` is exhausted.

mod http;
pub mod schema;
pub mod stub;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpBackend;
pub use schema::SchemaId;
pub use stub::{stub_complete, Rulebook, StubBackend};

pub const ENV_BACKEND_URL: &str = "JOBSCOPE_BACKEND_URL";
pub const ENV_MODEL_ID: &str = "JOBSCOPE_MODEL_ID";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    #[default]
    Stub,
}

impl std::str::FromStr for BackendKind {
    type Err = InferenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(Self::Http),
            "stub" => Ok(Self::Stub),
            other => Err(InferenceError::Config(format!("unknown backend kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    pub model_id: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_parallel: usize,
    /// Ask for temperature-zero decoding.
    pub deterministic: bool,
    /// Stub rulebook; the bundled rulebook is used when unset.
    pub rulebook: Option<PathBuf>,
    /// Truncate posting text in prompts to this many characters.
    pub max_prompt_chars: Option<usize>,
    /// Pause between attempts that failed at the transport level.
    pub retry_backoff_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Stub,
            endpoint_url: None,
            model_id: "stub-rulebook-v1".into(),
            timeout_secs: 60,
            max_retries: 3,
            max_parallel: 4,
            deterministic: true,
            rulebook: None,
            max_prompt_chars: None,
            retry_backoff_ms: 250,
        }
    }
}

impl BackendConfig {
    pub fn stub() -> Self {
        Self::default()
    }

    pub fn http(endpoint_url: &str, model_id: &str) -> Self {
        Self {
            kind: BackendKind::Http,
            endpoint_url: Some(endpoint_url.to_string()),
            model_id: model_id.to_string(),
            ..Self::default()
        }
    }

    /// Apply `JOBSCOPE_BACKEND_URL` / `JOBSCOPE_MODEL_ID` when set.
    pub fn apply_env(&mut self) {
        if let Ok(url) = std::env::var(ENV_BACKEND_URL) {
            if !url.is_empty() {
                self.endpoint_url = Some(url);
            }
        }
        if let Ok(model) = std::env::var(ENV_MODEL_ID) {
            if !model.is_empty() {
                self.model_id = model;
            }
        }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.max_parallel < 1 {
            return Err(InferenceError::Config("max_parallel must be at least 1".into()));
        }
        if self.model_id.trim().is_empty() {
            return Err(InferenceError::Config("model_id is empty".into()));
        }
        if self.kind == BackendKind::Http && self.endpoint_url.as_deref().is_none_or(str::is_empty) {
            return Err(InferenceError::Config("http backend needs endpoint_url".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceRequest {
    pub prompt: String,
    pub schema_id: SchemaId,
    /// Posting id plus stage; used in logs and diagnostics.
    pub request_id: String,
}

impl InferenceRequest {
    pub fn new(prompt: String, schema_id: SchemaId, request_id: String) -> Result<Self, InferenceError> {
        if prompt.trim().is_empty() {
            return Err(InferenceError::InvalidRequest(format!("{request_id}: empty prompt")));
        }
        Ok(Self { prompt, schema_id, request_id })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredOutput {
    pub schema_id: SchemaId,
    pub payload: serde_json::Value,
    pub raw_text: String,
    pub attempts: u32,
    pub model_id: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("{request_id}: backend unreachable after {attempts} attempt(s): {message}")]
    BackendUnreachable { request_id: String, attempts: u32, message: String },
    #[error("{request_id}: no schema-valid output after {attempts} attempt(s): {reason}")]
    Unclassifiable { request_id: String, attempts: u32, reason: String, raw_text: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// Failure below the content layer: connection, timeout, HTTP status,
/// or a response that does not follow the wire protocol.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// A source of raw completion text.
pub trait Completion: Send + Sync {
    fn complete(&self, request: &InferenceRequest, prompt: &str) -> Result<String, TransportError>;
    fn model_id(&self) -> &str;
}

/// Shared handle over a backend plus its retry and parallelism bounds.
#[derive(Clone)]
pub struct InferenceClient {
    backend: Arc<dyn Completion>,
    pub max_retries: u32,
    pub max_parallel: usize,
    pub max_prompt_chars: Option<usize>,
    pub retry_backoff: Duration,
}

impl std::fmt::Debug for InferenceClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InferenceClient")
            .field("model_id", &self.backend.model_id())
            .field("max_retries", &self.max_retries)
            .field("max_parallel", &self.max_parallel)
            .finish()
    }
}

impl InferenceClient {
    pub fn new(backend: Arc<dyn Completion>, config: &BackendConfig) -> Self {
        Self {
            backend,
            max_retries: config.max_retries,
            max_parallel: config.max_parallel.max(1),
            max_prompt_chars: config.max_prompt_chars,
            retry_backoff: Duration::from_millis(config.retry_backoff_ms),
        }
    }

    /// Build the backend named by `config`. A stub without a rulebook path
    /// uses the bundled rulebook.
    pub fn from_config(config: &BackendConfig) -> Result<Self, InferenceError> {
        config.validate()?;
        let backend: Arc<dyn Completion> = match config.kind {
            BackendKind::Http => Arc::new(HttpBackend::new(config)?),
            BackendKind::Stub => {
                let rules = match &config.rulebook {
                    Some(path) => Rulebook::load(path)?,
                    None => Rulebook::bundled(),
                };
                Arc::new(StubBackend::new(rules, &config.model_id))
            }
        };
        Ok(Self::new(backend, config))
    }

    pub fn model_id(&self) -> &str {
        self.backend.model_id()
    }
}

const CORRECTION_SUFFIX: &str = include_str!("../../prompts/correction.txt");

fn corrected_prompt(base: &str, schema: SchemaId, problem: &str) -> String {
    let suffix = CORRECTION_SUFFIX.replace("{{problem}}", problem).replace("{{schema}}", schema.format_hint());
    format!("{base}\n\n{suffix}")
}

/// Run one request to completion: at most `max_retries + 1` attempts.
pub fn classify_call(req: &InferenceRequest, client: &InferenceClient) -> Result<StructuredOutput, InferenceError> {
    let max_attempts = client.max_retries + 1;
    let mut last_invalid: Option<(String, String)> = None;
    let mut last_transport: Option<TransportError> = None;

    for attempt in 1..=max_attempts {
        let prompt = match &last_invalid {
            Some((problem, _)) => corrected_prompt(&req.prompt, req.schema_id, problem),
            None => req.prompt.clone(),
        };
        match client.backend.complete(req, &prompt) {
            Ok(text) => match schema::validate(req.schema_id, &text) {
                Ok(payload) => {
                    return Ok(StructuredOutput {
                        schema_id: req.schema_id,
                        payload,
                        raw_text: text,
                        attempts: attempt,
                        model_id: client.model_id().to_string(),
                    })
                }
                Err(problem) => {
                    log::debug!("{}: attempt {attempt} invalid: {problem}", req.request_id);
                    last_invalid = Some((problem, text));
                    last_transport = None;
                }
            },
            Err(e) => {
                log::debug!("{}: attempt {attempt} transport failure: {e}", req.request_id);
                last_transport = Some(e);
                if attempt < max_attempts && !client.retry_backoff.is_zero() {
                    std::thread::sleep(client.retry_backoff * attempt);
                }
            }
        }
    }

    match (last_transport, last_invalid) {
        (Some(e), _) => Err(InferenceError::BackendUnreachable {
            request_id: req.request_id.clone(),
            attempts: max_attempts,
            message: e.0,
        }),
        (None, Some((reason, raw_text))) => Err(InferenceError::Unclassifiable {
            request_id: req.request_id.clone(),
            attempts: max_attempts,
            reason,
            raw_text,
        }),
        (None, None) => unreachable!("at least one attempt is always made"),
    }
}

/// Map `f` over `items` on at most `max_parallel` threads. Results come back
/// in input order regardless of completion order.
pub fn run_bounded<T, R, F>(items: &[T], max_parallel: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = max_parallel.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break;
                        }
                        done.push((i, f(&items[i])));
                    }
                    done
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}
