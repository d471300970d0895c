//! Chat-completion types and the backend port.
//!
//! Every call carries the complete message list: backends keep no memory
//! between calls, so whatever the model should "remember" has to be resent.

use alloc::collections::VecDeque;
use alloc::rc::Rc;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;

use serde::{Deserialize, Serialize};

pub const DEFAULT_MODEL: &str = "gpt-4-1106-preview";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";
pub const DESIGNER_TEMPERATURE: f64 = 0.8;
pub const EMULATOR_TEMPERATURE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }
}

/// Model selection and sampling settings for one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_name: String,
    pub temperature: f64,
    pub base_url: String,
    /// Name of the environment variable holding the API key, not the key.
    pub api_key_env: String,
}

impl ModelConfig {
    pub fn new(model_name: impl Into<String>, temperature: f64) -> Result<Self, LlmError> {
        let config = Self {
            model_name: model_name.into(),
            temperature,
            base_url: DEFAULT_BASE_URL.to_string(),
            api_key_env: DEFAULT_API_KEY_ENV.to_string(),
        };
        config.validate()?;
        Ok(config)
    }

    /// The main designer model.
    pub fn designer() -> Self {
        Self::new(DEFAULT_MODEL, DESIGNER_TEMPERATURE).expect("default temperature in range")
    }

    /// The low-temperature model that plays the user in open-context runs.
    pub fn emulator() -> Self {
        Self::new(DEFAULT_MODEL, EMULATOR_TEMPERATURE).expect("default temperature in range")
    }

    pub fn with_model(mut self, model_name: impl Into<String>) -> Self {
        self.model_name = model_name.into();
        self
    }

    pub fn with_base_url(mut self, base_url: impl Into<String>) -> Self {
        self.base_url = base_url.into();
        self
    }

    pub fn with_api_key_env(mut self, var: impl Into<String>) -> Self {
        self.api_key_env = var.into();
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) || self.temperature.is_nan() {
            return Err(LlmError::InvalidTemperature(self.temperature));
        }
        Ok(())
    }
}

/// The body sent to `{base_url}/chat/completions`. Field order is part of
/// the wire format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn new(config: &ModelConfig, messages: &[ChatMessage]) -> Self {
        Self {
            model: config.model_name.clone(),
            temperature: config.temperature,
            messages: messages.to_vec(),
        }
    }

    /// Compact JSON body, byte-stable for a given request.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("request serialization is infallible")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

impl FinishReason {
    pub fn from_wire(reason: Option<&str>) -> Self {
        match reason {
            Some("stop") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            _ => FinishReason::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    /// `None` when the backend reported no token usage.
    pub usage: Option<Usage>,
}

impl ChatResponse {
    pub fn stop(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            finish_reason: FinishReason::Stop,
            usage: None,
        }
    }

    pub fn usage_or_zero(&self) -> Usage {
        self.usage.unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("message list is empty")]
    EmptyMessages,
    #[error("message {index} ({role}) has empty content")]
    EmptyContent { index: usize, role: Role },
    #[error("temperature {0} outside [0, 2]")]
    InvalidTemperature(f64),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("transport error (status {status:?}): {message}")]
    Transport { status: Option<u16>, message: String },
    #[error("script exhausted after {served} responses")]
    ScriptUnderrun { served: usize },
    #[error("script line {line}: {message}")]
    ScriptParse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

/// Anything that can answer a chat-completion request.
pub trait ChatBackend {
    fn send(&mut self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &mut B {
    fn send(&mut self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).send(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for alloc::boxed::Box<B> {
    fn send(&mut self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).send(request)
    }
}

/// Lets the designer and the emulator draw from one backend (one script).
impl<B: ChatBackend + ?Sized> ChatBackend for Rc<RefCell<B>> {
    fn send(&mut self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.borrow_mut().send(request)
    }
}

/// Validates the message list and asks `backend` for the next assistant reply.
pub fn complete<B: ChatBackend + ?Sized>(
    config: &ModelConfig,
    messages: &[ChatMessage],
    backend: &mut B,
) -> Result<ChatResponse, LlmError> {
    if messages.is_empty() {
        return Err(LlmError::EmptyMessages);
    }
    config.validate()?;
    for (index, message) in messages.iter().enumerate() {
        if message.role != Role::System && message.content.is_empty() {
            return Err(LlmError::EmptyContent {
                index,
                role: message.role,
            });
        }
    }
    backend.send(&ChatRequest::new(config, messages))
}

/// One line of a response script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<FinishReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

impl ScriptEntry {
    pub fn new(response: impl Into<String>) -> Self {
        Self {
            response: response.into(),
            request_digest: None,
            finish_reason: None,
            usage: None,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("script entry serialization is infallible")
    }
}

/// Parses newline-delimited `{"response": ...}` records. Blank lines are skipped.
pub fn parse_script(text: &str) -> Result<Vec<ScriptEntry>, LlmError> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str::<ScriptEntry>(line).map_err(|e| LlmError::ScriptParse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Positional scripted backend: the nth call gets the nth entry.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    queue: VecDeque<ScriptEntry>,
    served: usize,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        Self {
            queue: entries.into_iter().collect(),
            served: 0,
        }
    }

    pub fn from_responses<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(responses.into_iter().map(ScriptEntry::new))
    }

    pub fn from_jsonl(text: &str) -> Result<Self, LlmError> {
        parse_script(text).map(Self::new)
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }

    pub fn served(&self) -> usize {
        self.served
    }
}

impl ChatBackend for ScriptedBackend {
    fn send(&mut self, _request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let entry = self
            .queue
            .pop_front()
            .ok_or(LlmError::ScriptUnderrun {
                served: self.served,
            })?;
        self.served += 1;
        Ok(ChatResponse {
            content: entry.response,
            finish_reason: entry.finish_reason.unwrap_or(FinishReason::Stop),
            usage: entry.usage,
        })
    }
}
