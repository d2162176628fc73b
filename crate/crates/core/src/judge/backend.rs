use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::GenerationParams;

pub const LLM_API_KEY_ENV: &str = "HYDRE_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct BackendError {
    pub message: String,
    pub retryable: bool,
}

impl BackendError {
    pub fn retryable(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: true,
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: false,
        }
    }
}

/// Something that turns a prompt into a completion.
pub trait Backend: Send + Sync {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError>;

    /// Exact prompt token count, when the backend knows its tokenizer.
    fn count_tokens(&self, _prompt: &str) -> Option<usize> {
        None
    }
}

/// Refuses every dispatch. Used for replay runs so that a cache gap can
/// never turn into a network call.
#[derive(Debug, Default)]
pub struct FailOnDispatch {
    attempts: AtomicUsize,
}

impl FailOnDispatch {
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }
}

impl Backend for FailOnDispatch {
    fn complete(&self, _prompt: &str, _params: &GenerationParams) -> Result<String, BackendError> {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        Err(BackendError::fatal("dispatch attempted on a replay-only backend"))
    }
}

/// Backend driven by a closure, with a call counter. Handy for offline runs
/// and tests.
pub struct FnBackend<F> {
    f: F,
    calls: AtomicUsize,
}

impl<F> FnBackend<F>
where
    F: Fn(&str) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self {
            f,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F> Backend for FnBackend<F>
where
    F: Fn(&str) -> Result<String, BackendError> + Send + Sync,
{
    fn complete(&self, prompt: &str, _params: &GenerationParams) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.f)(prompt)
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

/// Chat-completion endpoint speaking the common
/// `{"model","messages","temperature","max_tokens"}` dialect.
pub struct HttpChatBackend {
    url: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpChatBackend {
    /// Fails when `HYDRE_LLM_API_KEY` is not set.
    pub fn from_env(url: impl Into<String>) -> Result<Self, BackendError> {
        let api_key = std::env::var(LLM_API_KEY_ENV)
            .map_err(|_| BackendError::fatal(format!("{LLM_API_KEY_ENV} is not set")))?;
        Self::new(url, api_key)
    }

    pub fn new(url: impl Into<String>, api_key: impl Into<String>) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| BackendError::fatal(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            api_key: api_key.into(),
            client,
        })
    }
}

impl Backend for HttpChatBackend {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        let body = ChatRequest {
            model: &params.model_name,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: params.temperature,
            max_tokens: params.max_output_tokens,
        };
        let resp = self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| BackendError::retryable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let msg = format!("HTTP {status}");
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                BackendError::retryable(msg)
            } else {
                BackendError::fatal(msg)
            });
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| BackendError::fatal(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content.unwrap_or_default())
            .ok_or_else(|| BackendError::fatal("response has no choices"))
    }
}
