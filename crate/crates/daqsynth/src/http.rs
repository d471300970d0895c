//! Blocking client for OpenAI-compatible `/chat/completions` endpoints.

use std::time::Duration;

use daqsynth_core::llm::{ChatBackend, ChatRequest, ChatResponse, FinishReason, LlmError, ModelConfig, Usage};
use serde::Deserialize;

pub const MAX_RETRIES: u32 = 3;

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: MAX_RETRIES,
            base_delay: Duration::from_millis(500),
            timeout: Duration::from_secs(180),
        }
    }
}

/// Talks to `{base_url}/chat/completions`. The key is read from the
/// environment variable named by the config when the backend is built.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    retry: RetryPolicy,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

fn transient(status: reqwest::StatusCode) -> bool {
    status == reqwest::StatusCode::TOO_MANY_REQUESTS || status.is_server_error()
}

impl HttpBackend {
    pub fn new(config: &ModelConfig, retry: RetryPolicy) -> Result<Self, LlmError> {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| {
                LlmError::Configuration(format!("environment variable {} is not set", config.api_key_env))
            })?;
        Self::with_key(config, api_key, retry)
    }

    pub fn with_key(config: &ModelConfig, api_key: String, retry: RetryPolicy) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(retry.timeout)
            .build()
            .map_err(|e| LlmError::Configuration(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            api_key,
            retry,
        })
    }

    fn attempt(&self, body: &str) -> Result<ChatResponse, (bool, LlmError)> {
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_owned())
            .send()
            .map_err(|e| {
                let retry = e.is_timeout() || e.is_connect();
                (retry, LlmError::Transport { status: None, message: e.to_string() })
            })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            (true, LlmError::Transport { status: Some(status.as_u16()), message: e.to_string() })
        })?;
        if !status.is_success() {
            return Err((
                transient(status),
                LlmError::Transport { status: Some(status.as_u16()), message: text },
            ));
        }
        let wire: WireResponse = serde_json::from_str(&text).map_err(|e| {
            (false, LlmError::Transport { status: Some(status.as_u16()), message: format!("bad response body: {e}") })
        })?;
        let choice = wire.choices.into_iter().next().ok_or_else(|| {
            (false, LlmError::Transport { status: Some(status.as_u16()), message: String::from("response has no choices") })
        })?;
        Ok(ChatResponse {
            content: choice.message.content.unwrap_or_default(),
            finish_reason: FinishReason::from_wire(choice.finish_reason.as_deref()),
            usage: wire.usage.map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            }),
        })
    }
}

impl ChatBackend for HttpBackend {
    fn send(&mut self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let body = request.to_json();
        let mut retries = 0;
        loop {
            match self.attempt(&body) {
                Ok(response) => return Ok(response),
                Err((true, _)) if retries < self.retry.max_retries => {
                    std::thread::sleep(self.retry.base_delay * 2u32.pow(retries));
                    retries += 1;
                }
                Err((_, e)) => return Err(e),
            }
        }
    }
}
