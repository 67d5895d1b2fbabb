//! GLM annotation: prompting, response parsing, caching and batch execution.
//!
//! Each sentence is compiled into a prompt with [`assemble_prompt`], sent to a
//! [`GlmClient`], and the reply parsed with [`parse_response`]. Results are
//! cached under `(model, prompt_hash)`, where `prompt_hash` is the SHA-256 of
//! the compact JSON of the prompt messages, so any framework edit invalidates
//! stale labels.
//!
//! Transport errors, 429 and 5xx replies are retried up to
//! `retry.max_attempts` times in total; the `k`-th retry waits
//! `base_backoff * 2^(k-1)`. A reply without a resolvable label triggers one
//! re-ask that asks the model to finish with the categorization sentence.

pub mod cache;
pub mod client;
pub mod cost;
pub mod pacing;

pub use cache::AnnotationCache;
pub use client::{
    ChatRequest, ClientError, Completion, FnClient, GlmClient, HttpClient, MockClient, MockRule,
};
pub use cost::{estimate_cost, median_length_sentence, token_estimate, CostEstimate, Prices};
pub use pacing::{Clock, ManualClock, RateLimiter, RetryPolicy, SystemClock};

use crate::corpus::Sentence;
use crate::framework::{assemble_prompt, FrameworkSpec, Message, PromptMessages, Role};
use crate::Label;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

pub const ENV_API_KEY: &str = "GLM_API_KEY";
pub const ENV_API_BASE: &str = "GLM_API_BASE";
pub const ENV_MODEL: &str = "GLM_MODEL";

const PATTERN: &str = "categorize this sentence as:";

/// Sent after an unparseable reply.
pub const REASK: &str = "Please finish your answer with exactly one line of the form \
\"Based on these considerations, I would categorize this sentence as: <Direct PVE | Contextual PVE | No PVE>.\"";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GlmConfig {
    pub base_url: String,
    pub model: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub max_concurrent: usize,
    pub retry: RetryPolicy,
    pub temperature: f64,
    pub timeout_secs: f64,
    /// Optional token-bucket limit on request starts.
    pub requests_per_minute: Option<f64>,
}

impl Default for GlmConfig {
    fn default() -> Self {
        GlmConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            api_key: None,
            max_concurrent: 4,
            retry: RetryPolicy::default(),
            temperature: 0.0,
            timeout_secs: 120.0,
            requests_per_minute: None,
        }
    }
}

impl GlmConfig {
    /// Overrides base URL, model and key from `GLM_API_BASE`, `GLM_MODEL` and
    /// `GLM_API_KEY` when set.
    pub fn with_env(mut self) -> Self {
        if let Ok(base) = std::env::var(ENV_API_BASE) {
            self.base_url = base;
        }
        if let Ok(model) = std::env::var(ENV_MODEL) {
            self.model = model;
        }
        self.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        self
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if self.max_concurrent < 1 {
            errors.push("glm.max_concurrent must be at least 1".to_string());
        }
        if self.retry.max_attempts < 1 {
            errors.push("glm.retry.max_attempts must be at least 1".to_string());
        }
        if self.retry.base_backoff_secs.is_nan() || self.retry.base_backoff_secs < 0.0 {
            errors.push("glm.retry.base_backoff_secs must be non-negative".to_string());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            errors.push(format!(
                "glm.temperature {} outside [0, 2]",
                self.temperature
            ));
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            errors.push("glm.timeout_secs must be positive".to_string());
        }
        if let Some(rpm) = self.requests_per_minute {
            if rpm.is_nan() || rpm <= 0.0 {
                errors.push("glm.requests_per_minute must be positive".to_string());
            }
        }
        if self.model.trim().is_empty() {
            errors.push("glm.model is empty".to_string());
        }
        errors
    }

    /// Builds the live HTTP client; requires an API key.
    pub fn http_client(&self) -> Result<HttpClient, String> {
        let key = self
            .api_key
            .as_deref()
            .ok_or_else(|| format!("{ENV_API_KEY} is not set"))?;
        Ok(HttpClient::new(
            &self.base_url,
            key,
            Duration::from_secs_f64(self.timeout_secs),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub sent_id: String,
    pub label: Label,
    pub rationale: String,
    pub model: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub prompt_hash: String,
    pub ts: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("no \"categorize this sentence as:\" in response")]
    MissingPattern,
    #[error("unrecognized label {0:?}")]
    UnknownLabel(String),
}

/// Finds the last case-insensitive "categorize this sentence as:" and
/// resolves the label that follows. The rationale is the full reply.
pub fn parse_response(text: &str) -> Result<(Label, String), ParseError> {
    // ASCII lowercasing keeps byte offsets aligned with `text`.
    let lower = text.to_ascii_lowercase();
    let pos = lower.rfind(PATTERN).ok_or(ParseError::MissingPattern)?;
    let tail = text[pos + PATTERN.len()..].trim_start();
    let line = tail.lines().next().unwrap_or("");
    let label =
        Label::resolve_prefix(line).ok_or_else(|| ParseError::UnknownLabel(line.to_string()))?;
    Ok((label, text.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnnotateError {
    #[error("{sent_id}: gave up after {attempts} attempts: {last}")]
    RetriableExhausted {
        sent_id: String,
        attempts: u32,
        last: ClientError,
    },
    #[error("{sent_id}: request rejected: {error}")]
    Rejected { sent_id: String, error: ClientError },
    #[error("{sent_id}: unparseable response after re-ask")]
    Unparseable {
        sent_id: String,
        /// Replies in order: the original and the re-ask.
        raw: Vec<String>,
    },
}

impl AnnotateError {
    pub fn sent_id(&self) -> &str {
        match self {
            AnnotateError::RetriableExhausted { sent_id, .. }
            | AnnotateError::Rejected { sent_id, .. }
            | AnnotateError::Unparseable { sent_id, .. } => sent_id,
        }
    }
}

/// Sends prompts through a client with retries, pacing and caching.
pub struct Annotator<C> {
    client: C,
    config: GlmConfig,
    clock: Arc<dyn Clock>,
    limiter: Option<RateLimiter>,
}

impl<C: GlmClient> Annotator<C> {
    pub fn new(client: C, config: GlmConfig) -> Self {
        Self::with_clock(client, config, Arc::new(SystemClock))
    }

    pub fn with_clock(client: C, config: GlmConfig, clock: Arc<dyn Clock>) -> Self {
        let limiter = config
            .requests_per_minute
            .map(|rpm| RateLimiter::per_minute(rpm, clock.as_ref()));
        Annotator {
            client,
            config,
            clock,
            limiter,
        }
    }

    pub fn client(&self) -> &C {
        &self.client
    }

    pub fn config(&self) -> &GlmConfig {
        &self.config
    }

    fn call(&self, sent_id: &str, messages: &PromptMessages) -> Result<Completion, AnnotateError> {
        let request = ChatRequest {
            model: &self.config.model,
            messages,
            temperature: self.config.temperature,
        };
        let max = self.config.retry.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            if let Some(l) = &self.limiter {
                l.acquire(self.clock.as_ref());
            }
            match self.client.complete(&request) {
                Ok(c) => return Ok(c),
                Err(e) if !e.is_retriable() => {
                    return Err(AnnotateError::Rejected {
                        sent_id: sent_id.to_string(),
                        error: e,
                    })
                }
                Err(e) if attempt >= max => {
                    return Err(AnnotateError::RetriableExhausted {
                        sent_id: sent_id.to_string(),
                        attempts: attempt,
                        last: e,
                    })
                }
                Err(e) => {
                    log::debug!("{sent_id}: attempt {attempt} failed: {e}");
                    self.clock.sleep(self.config.retry.backoff(attempt));
                    attempt += 1;
                }
            }
        }
    }

    /// Annotates one sentence, consulting and filling `cache`.
    pub fn annotate(
        &self,
        sentence: &Sentence,
        spec: &FrameworkSpec,
        cache: &AnnotationCache,
    ) -> Result<Annotation, AnnotateError> {
        self.annotate_inner(sentence, spec, cache).map(|(a, _)| a)
    }

    /// Returns the annotation and whether it came from the cache.
    fn annotate_inner(
        &self,
        sentence: &Sentence,
        spec: &FrameworkSpec,
        cache: &AnnotationCache,
    ) -> Result<(Annotation, bool), AnnotateError> {
        let messages = assemble_prompt(spec, &sentence.text);
        let prompt_hash = messages.hash();
        if let Some(mut hit) = cache.get(&self.config.model, &prompt_hash) {
            hit.sent_id = sentence.sent_id.clone();
            return Ok((hit, true));
        }

        let first = self.call(&sentence.sent_id, &messages)?;
        let mut prompt_tokens = first.prompt_tokens;
        let mut completion_tokens = first.completion_tokens;
        let (label, rationale) = match parse_response(&first.content) {
            Ok(parsed) => parsed,
            Err(e) => {
                log::warn!("{}: {e}; re-asking", sentence.sent_id);
                let mut retry = messages.clone();
                retry
                    .0
                    .push(Message::new(Role::Assistant, first.content.clone()));
                retry.0.push(Message::new(Role::User, REASK));
                let second = self.call(&sentence.sent_id, &retry)?;
                prompt_tokens += second.prompt_tokens;
                completion_tokens += second.completion_tokens;
                parse_response(&second.content).map_err(|_| AnnotateError::Unparseable {
                    sent_id: sentence.sent_id.clone(),
                    raw: vec![first.content.clone(), second.content.clone()],
                })?
            }
        };
        let annotation = Annotation {
            sent_id: sentence.sent_id.clone(),
            label,
            rationale,
            model: self.config.model.clone(),
            prompt_tokens,
            completion_tokens,
            prompt_hash,
            ts: self
                .clock
                .now()
                .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        };
        cache.insert(annotation.clone());
        Ok((annotation, false))
    }

    /// Annotates `sentences` with at most `max_concurrent` requests in
    /// flight. Failures are collected, never fatal.
    pub fn annotate_batch(
        &self,
        sentences: &[Sentence],
        spec: &FrameworkSpec,
        cache: &AnnotationCache,
    ) -> BatchOutcome {
        let queue = parking_lot::Mutex::new(sentences.iter().collect::<VecDeque<_>>());
        let results = parking_lot::Mutex::new(Vec::with_capacity(sentences.len()));
        let workers = self
            .config
            .max_concurrent
            .max(1)
            .min(sentences.len().max(1));
        let fresh = AtomicUsize::new(0);
        let cached = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let Some(s) = queue.lock().pop_front() else {
                        break;
                    };
                    let r = self.annotate_inner(s, spec, cache);
                    if let Ok((_, hit)) = &r {
                        let counter = if *hit { &cached } else { &fresh };
                        counter.fetch_add(1, Ordering::Relaxed);
                    }
                    results.lock().push(r.map(|(a, _)| a));
                });
            }
        });

        let mut annotations = Vec::new();
        let mut failures = Vec::new();
        for r in results.into_inner() {
            match r {
                Ok(a) => annotations.push(a),
                Err(e) => failures.push(FailedItem::from(e)),
            }
        }
        annotations.sort_by(|a, b| a.sent_id.cmp(&b.sent_id));
        failures.sort_by(|a, b| a.sent_id.cmp(&b.sent_id));
        BatchOutcome {
            summary: BatchSummary {
                done: fresh.into_inner(),
                cached: cached.into_inner(),
                failed: failures.len(),
            },
            annotations,
            failures,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    /// Newly annotated by the client in this run.
    pub done: usize,
    /// Served from the cache.
    pub cached: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedItem {
    pub sent_id: String,
    pub reason: String,
    /// Raw replies kept for audit when the failure was a parse failure.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub raw: Vec<String>,
}

impl From<AnnotateError> for FailedItem {
    fn from(e: AnnotateError) -> Self {
        let raw = match &e {
            AnnotateError::Unparseable { raw, .. } => raw.clone(),
            _ => Vec::new(),
        };
        FailedItem {
            sent_id: e.sent_id().to_string(),
            reason: e.to_string(),
            raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchOutcome {
    pub summary: BatchSummary,
    /// Successful annotations sorted by `sent_id`.
    pub annotations: Vec<Annotation>,
    pub failures: Vec<FailedItem>,
}

#[cfg(test)]
mod tests;
