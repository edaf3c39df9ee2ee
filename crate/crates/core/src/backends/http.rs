//! OpenAI-compatible chat-completions and embeddings client.

use std::thread;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::json;

use super::{BackendError, ChatBackend, ChatRequest, Embedder, EmbeddingVector};

pub const API_KEY_ENV: &str = "TIMEM_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpSettings {
    pub base_url: String,
    pub chat_path: String,
    pub embed_path: String,
    pub chat_model: String,
    pub embed_model: String,
    pub api_key: Option<String>,
    pub dimension: usize,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub max_in_flight: usize,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            chat_path: "/v1/chat/completions".into(),
            embed_path: "/v1/embeddings".into(),
            chat_model: String::new(),
            embed_model: String::new(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            dimension: 1024,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            max_in_flight: 4,
        }
    }
}

/// Counting semaphore bounding in-flight requests.
struct Permits {
    free: Mutex<usize>,
    cond: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cond: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cond.wait(&mut free);
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cond.notify_one();
    }
}

pub struct HttpBackend {
    settings: HttpSettings,
    client: Client,
    permits: Permits,
}

enum Attempt {
    Retry(BackendError),
    Fail(BackendError),
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

impl HttpBackend {
    pub fn new(settings: HttpSettings) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(settings.timeout)
            .build()
            .map_err(|e| BackendError::ProviderError(format!("building client: {e}")))?;
        let permits = Permits::new(settings.max_in_flight);
        Ok(Self {
            settings,
            client,
            permits,
        })
    }

    pub fn settings(&self) -> &HttpSettings {
        &self.settings
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.settings.base_url.trim_end_matches('/'), path)
    }

    /// POSTs `body`, retrying timeouts, 408, 429 and 5xx with exponential
    /// backoff up to `max_retries` extra attempts.
    fn post_json(&self, path: &str, body: &serde_json::Value) -> Result<String, BackendError> {
        let _permit = self.permits.acquire();
        let url = self.url(path);
        let mut attempt = 0;
        loop {
            match self.try_once(&url, body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fail(err)) => return Err(err),
                Err(Attempt::Retry(err)) => {
                    if attempt >= self.settings.max_retries {
                        return Err(err);
                    }
                    let delay = self.settings.backoff_base * 2u32.saturating_pow(attempt);
                    log::warn!("{url}: {err}; retrying in {delay:?}");
                    thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }

    fn try_once(&self, url: &str, body: &serde_json::Value) -> Result<String, Attempt> {
        let mut request = self.client.post(url).json(body);
        if let Some(key) = &self.settings.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| {
            if e.is_timeout() {
                Attempt::Retry(BackendError::Timeout(e.to_string()))
            } else if e.is_connect() || e.is_request() {
                Attempt::Retry(BackendError::ProviderError(e.to_string()))
            } else {
                Attempt::Fail(BackendError::ProviderError(e.to_string()))
            }
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            if e.is_timeout() {
                Attempt::Retry(BackendError::Timeout(e.to_string()))
            } else {
                Attempt::Retry(BackendError::ProviderError(e.to_string()))
            }
        })?;
        if status.is_success() {
            return Ok(text);
        }
        let detail = format!("HTTP {status}: {}", truncate(&text, 200));
        Err(match status {
            StatusCode::TOO_MANY_REQUESTS => Attempt::Retry(BackendError::RateLimited(detail)),
            StatusCode::REQUEST_TIMEOUT => Attempt::Retry(BackendError::Timeout(detail)),
            s if s.is_server_error() => Attempt::Retry(BackendError::ProviderError(detail)),
            _ => Attempt::Fail(BackendError::ProviderError(detail)),
        })
    }
}

fn truncate(text: &str, max: usize) -> &str {
    match text.char_indices().nth(max) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

impl ChatBackend for HttpBackend {
    fn chat_complete(&self, req: &ChatRequest) -> Result<String, BackendError> {
        if req.prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        if req.temperature < 0.0 {
            return Err(BackendError::InvalidRequest("negative temperature".into()));
        }
        let body = json!({
            "model": self.settings.chat_model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_output,
        });
        let text = self.post_json(&self.settings.chat_path, &body)?;
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::ProviderError(format!("malformed chat response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::ProviderError("chat response has no content".into()))
    }
}

impl Embedder for HttpBackend {
    fn dimension(&self) -> usize {
        self.settings.dimension
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let body = json!({"model": self.settings.embed_model, "input": text});
        let raw = self.post_json(&self.settings.embed_path, &body)?;
        let parsed: EmbeddingResponse = serde_json::from_str(&raw)
            .map_err(|e| BackendError::ProviderError(format!("malformed embedding response: {e}")))?;
        let values = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::ProviderError("embedding response has no data".into()))?
            .embedding;
        if values.len() != self.settings.dimension {
            return Err(BackendError::ProviderError(format!(
                "embedding dimension {} differs from configured {}",
                values.len(),
                self.settings.dimension
            )));
        }
        EmbeddingVector::normalized(values)
    }
}
