//! Chat-completions backed response model.

mod backend;
mod client;
mod prompt;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::LlmResponseModel;
pub use client::{
    ChatMessage, ChatRequest, ChatTransport, HttpChat, RecordedExchange, Recorder, Replayer,
};
pub use prompt::{
    build_prompt, clean_action_text, parse_state_reply, PromptBundle, TaskInstruction,
};

/// Environment variable the API key is read from.
pub const API_KEY_ENV: &str = "IRPLAN_LLM_API_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint rejected the request: {0}")]
    Configuration(String),
    #[error("malformed completion response: {0}")]
    Response(String),
    #[error("no six-stage state object in reply")]
    Parse,
    #[error("replay fixture error: {0}")]
    Replay(String),
}

/// Secret string that never prints.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        ApiKey(key.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()).map(ApiKey)
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(***)")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout_secs: f64,
    /// Cap on concurrent requests from one client.
    pub max_in_flight: usize,
    /// First retry delay; doubles on every further retry.
    pub backoff_ms: u64,
    #[serde(skip)]
    pub api_key: Option<ApiKey>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint_url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model_name: "incident-response".into(),
            temperature: 0.6,
            max_retries: 3,
            timeout_secs: 120.0,
            max_in_flight: 4,
            backoff_ms: 500,
            api_key: None,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::Configuration(format!("temperature {} < 0", self.temperature)));
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(LlmError::Configuration("timeout must be positive".into()));
        }
        Ok(())
    }
}
