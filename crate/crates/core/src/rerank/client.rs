use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{parse_verdict, PromptSpec, RenderedPrompt, Verdict};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ClientError {
    /// Worth retrying: connection failures, timeouts, 429 and 5xx responses.
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Fatal(String),
    #[error("configuration: {0}")]
    Config(String),
}

/// A chat-completion backend that answers a rendered prompt with raw text.
pub trait RerankerClient: Send + Sync {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<String, ClientError>;
}

impl<C: RerankerClient + ?Sized> RerankerClient for &C {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<String, ClientError> {
        (**self).complete(prompt)
    }
}

impl<C: RerankerClient + ?Sized> RerankerClient for Box<C> {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<String, ClientError> {
        (**self).complete(prompt)
    }
}

impl<C: RerankerClient + ?Sized> RerankerClient for std::sync::Arc<C> {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<String, ClientError> {
        (**self).complete(prompt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff_ms: 250,
            max_backoff_ms: 4_000,
        }
    }
}

impl RetryPolicy {
    pub fn no_retries() -> Self {
        Self {
            max_retries: 0,
            ..Self::default()
        }
    }

    /// Delay before retry number `attempt` (0-based), doubling each time.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        Duration::from_millis(
            self.initial_backoff_ms
                .saturating_mul(factor)
                .min(self.max_backoff_ms),
        )
    }
}

/// Sends `prompt` through `client` and parses the answer.
///
/// Transient failures are retried per `policy`. When the client keeps failing
/// the verdict is unparseable and `raw` records the last error.
pub fn rerank(client: &dyn RerankerClient, prompt: &PromptSpec, policy: &RetryPolicy) -> Verdict {
    let mut attempt = 0;
    loop {
        match client.complete(&prompt.rendered) {
            Ok(raw) => return parse_verdict(&raw, prompt),
            Err(ClientError::Transient(msg)) if attempt < policy.max_retries => {
                tracing::debug!(attempt, error = %msg, "reranker call failed, retrying");
                std::thread::sleep(policy.backoff(attempt));
                attempt += 1;
            }
            Err(e) => {
                tracing::warn!(attempts = attempt + 1, error = %e, "reranker call gave up");
                return Verdict::unparseable(format!(
                    "error after {} attempt(s): {e}",
                    attempt + 1
                ));
            }
        }
    }
}

/// Deterministic stand-in backend: canned answers keyed by prompt hash.
///
/// Script files are JSON:
///
/// ```text
/// {"v":1,"default":"invalid","responses":{"<sha256 of prompt>":"2"}}
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedClient {
    #[serde(default = "script_version")]
    v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default: Option<String>,
    #[serde(default)]
    responses: BTreeMap<String, String>,
}

fn script_version() -> u32 {
    1
}

impl ScriptedClient {
    pub fn new() -> Self {
        Self {
            v: 1,
            ..Self::default()
        }
    }

    /// Answer used for prompts that have no scripted response.
    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default = Some(response.into());
        self
    }

    pub fn insert(&mut self, prompt: &RenderedPrompt, response: impl Into<String>) {
        self.responses.insert(prompt.sha256(), response.into());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self, ClientError> {
        let script: Self = serde_json::from_str(text)
            .map_err(|e| ClientError::Config(format!("stub script: {e}")))?;
        if script.v != 1 {
            return Err(ClientError::Config(format!(
                "stub script version {} is not supported",
                script.v
            )));
        }
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClientError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }
}

impl RerankerClient for ScriptedClient {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<String, ClientError> {
        let hash = prompt.sha256();
        self.responses
            .get(&hash)
            .or(self.default.as_ref())
            .cloned()
            .ok_or_else(|| ClientError::Fatal(format!("no scripted response for prompt {hash}")))
    }
}

/// Caps the number of concurrent `complete` calls on the wrapped client.
pub struct ConcurrencyLimit<C> {
    inner: C,
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl<C> ConcurrencyLimit<C> {
    pub fn new(inner: C, max_in_flight: usize) -> Self {
        Self {
            inner,
            max_in_flight: max_in_flight.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().unwrap_or_else(|e| e.into_inner())
    }
}

struct Permit<'a, C>(&'a ConcurrencyLimit<C>);

impl<C> Drop for Permit<'_, C> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

impl<C: RerankerClient> RerankerClient for ConcurrencyLimit<C> {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<String, ClientError> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max_in_flight {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        drop(n);
        let _permit = Permit(self);
        self.inner.complete(prompt)
    }
}
