//! GLM clients: the OpenAI-style HTTP client and an offline mock.

use crate::framework::{canonical_suffix, PromptMessages, Role, USER_PREFIX};
use crate::Label;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub messages: &'a PromptMessages,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Decode(String),
}

impl ClientError {
    /// Transport failures, rate limiting (429) and server errors (5xx) are
    /// worth retrying; other failures are not.
    pub fn is_retriable(&self) -> bool {
        match self {
            ClientError::Transport(_) => true,
            ClientError::Status { status, .. } => *status == 429 || *status >= 500,
            ClientError::Decode(_) => false,
        }
    }
}

pub trait GlmClient: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, ClientError>;
}

impl<T: GlmClient + ?Sized> GlmClient for &T {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, ClientError> {
        (**self).complete(request)
    }
}

impl<T: GlmClient + ?Sized> GlmClient for std::sync::Arc<T> {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, ClientError> {
        (**self).complete(request)
    }
}

/// Client for `POST {base_url}/chat/completions`.
pub struct HttpClient {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a PromptMessages,
    temperature: f64,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpClient {
    pub fn new(base_url: &str, api_key: &str, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpClient {
            agent,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key: api_key.to_string(),
        }
    }
}

impl GlmClient for HttpClient {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, ClientError> {
        let body = WireRequest {
            model: request.model,
            messages: request.messages,
            temperature: request.temperature,
        };
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ClientError::Status { status, body });
        }
        let parsed: WireResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::Decode(e.to_string()))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ClientError::Decode("no choices[0].message.content".into()))?;
        let usage = parsed.usage.unwrap_or_default();
        Ok(Completion {
            content,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        })
    }
}

/// The target sentence of a prompt: the last user turn in `Sentence: ...` form.
pub fn target_sentence(messages: &PromptMessages) -> Option<&str> {
    messages
        .messages()
        .iter()
        .rev()
        .filter(|m| m.role == Role::User)
        .find_map(|m| m.content.strip_prefix(USER_PREFIX))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    /// Case-insensitive substring of the target sentence.
    pub contains: String,
    pub label: Label,
}

/// Deterministic offline client configured by a JSON fixture:
///
/// ```json
/// {"rules": [{"contains": "privacy", "label": "D_PVE"}],
///  "default": "NO_PVE",
///  "fail": ["marker that triggers transport errors"],
///  "garbage": ["marker that triggers unparseable replies"]}
/// ```
///
/// The first matching rule decides the label. Replies follow the exemplar
/// format and end with the canonical categorization suffix.
#[derive(Debug, Serialize, Deserialize)]
pub struct MockClient {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default = "default_label")]
    pub default: Label,
    #[serde(default)]
    pub fail: Vec<String>,
    #[serde(default)]
    pub garbage: Vec<String>,
    #[serde(skip)]
    pub latency: Option<Duration>,
    #[serde(skip)]
    pub(crate) calls: AtomicUsize,
}

fn default_label() -> Label {
    Label::NoPve
}

impl Default for MockClient {
    fn default() -> Self {
        MockClient {
            rules: Vec::new(),
            default: default_label(),
            fail: Vec::new(),
            garbage: Vec::new(),
            latency: None,
            calls: AtomicUsize::new(0),
        }
    }
}

impl MockClient {
    pub fn new(rules: Vec<MockRule>, default: Label) -> Self {
        MockClient {
            rules,
            default,
            ..MockClient::default()
        }
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn label_for(&self, sentence: &str) -> Label {
        let lower = sentence.to_lowercase();
        self.rules
            .iter()
            .find(|r| lower.contains(&r.contains.to_lowercase()))
            .map_or(self.default, |r| r.label)
    }

    fn reply(&self, sentence: &str) -> String {
        let label = self.label_for(sentence);
        let lower = sentence.to_lowercase();
        let reason = match self
            .rules
            .iter()
            .find(|r| lower.contains(&r.contains.to_lowercase()))
        {
            Some(rule) => format!(
                "The sentence mentions {:?}, which signals this category.",
                rule.contains
            ),
            None => "The sentence contains none of the signal terms.".to_string(),
        };
        format!(
            "Let's think step by step. {reason} {}",
            canonical_suffix(label)
        )
    }
}

fn estimate_tokens(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

impl GlmClient for MockClient {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(d) = self.latency {
            std::thread::sleep(d);
        }
        let sentence = target_sentence(request.messages).unwrap_or_default();
        let lower = sentence.to_lowercase();
        if self.fail.iter().any(|m| lower.contains(&m.to_lowercase())) {
            return Err(ClientError::Transport("mock: injected failure".into()));
        }
        let content = if self
            .garbage
            .iter()
            .any(|m| lower.contains(&m.to_lowercase()))
        {
            "I am not sure what this sentence is about.".to_string()
        } else {
            self.reply(sentence)
        };
        Ok(Completion {
            prompt_tokens: estimate_tokens(request.messages.char_count()),
            completion_tokens: estimate_tokens(content.chars().count()),
            content,
        })
    }
}

/// A client backed by a closure, for tests and adapters.
pub struct FnClient<F>(pub F);

impl<F> GlmClient for FnClient<F>
where
    F: Fn(&ChatRequest<'_>) -> Result<Completion, ClientError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest<'_>) -> Result<Completion, ClientError> {
        (self.0)(request)
    }
}
