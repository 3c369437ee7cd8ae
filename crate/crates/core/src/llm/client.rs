use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ApiKey, LlmConfig, LlmError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: impl Into<String>, content: impl Into<String>) -> Self {
        ChatMessage {
            role: role.into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    /// Stable text of the conversation, used as the replay key.
    pub fn prompt_text(&self) -> String {
        serde_json::to_string(&self.messages).expect("messages serialize")
    }

    pub fn prompt_hash(&self) -> String {
        hex::encode(Sha256::digest(self.prompt_text().as_bytes()))
    }
}

/// Anything that turns a chat request into the assistant's reply text.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

impl<T: ChatTransport + ?Sized> ChatTransport for std::sync::Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

struct Slots {
    free: Mutex<usize>,
    ready: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Slots {
            free: Mutex::new(n.max(1)),
            ready: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock poisoned");
        while *free == 0 {
            free = self.ready.wait(free).expect("slot lock poisoned");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock poisoned") += 1;
        self.0.ready.notify_one();
    }
}

#[derive(Deserialize)]
struct CompletionReply {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: ChatMessage,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(LlmError),
}

/// OpenAI-style chat-completions endpoint over HTTP.
///
/// 5xx replies, timeouts and connection failures are retried with
/// exponential backoff; 4xx replies fail immediately.
pub struct HttpChat {
    endpoint: String,
    api_key: Option<ApiKey>,
    max_retries: u32,
    backoff: Duration,
    client: reqwest::blocking::Client,
    slots: Slots,
}

impl HttpChat {
    pub fn new(config: &LlmConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(HttpChat {
            endpoint: config.endpoint_url.clone(),
            api_key: config.api_key.clone().or_else(ApiKey::from_env),
            max_retries: config.max_retries,
            backoff: Duration::from_millis(config.backoff_ms),
            client,
            slots: Slots::new(config.max_in_flight),
        })
    }

    fn attempt(&self, request: &ChatRequest) -> Attempt {
        let mut builder = self.client.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key.expose());
        }
        let response = match builder.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => return Attempt::Retry(e.to_string()),
            Err(e) => return Attempt::Fatal(LlmError::Transport(e.to_string())),
        };
        let status = response.status();
        if status.is_server_error() {
            return Attempt::Retry(format!("status {status}"));
        }
        if status.is_client_error() {
            return Attempt::Fatal(LlmError::Configuration(format!("status {status}")));
        }
        let body: CompletionReply = match response.json() {
            Ok(b) => b,
            Err(e) if e.is_timeout() => return Attempt::Retry(e.to_string()),
            Err(e) => return Attempt::Fatal(LlmError::Response(e.to_string())),
        };
        match body.choices.into_iter().next() {
            Some(choice) => Attempt::Done(choice.message.content),
            None => Attempt::Fatal(LlmError::Response("no choices".into())),
        }
    }
}

impl ChatTransport for HttpChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let _slot = self.slots.acquire();
        let mut delay = self.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Attempt::Done(reply) => return Ok(reply),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(reason) if attempt >= self.max_retries => {
                    return Err(LlmError::Transport(format!(
                        "giving up after {} attempts: {reason}",
                        attempt + 1
                    )))
                }
                Attempt::Retry(reason) => {
                    tracing::debug!(attempt, %reason, "retrying chat request");
                    std::thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                    attempt += 1;
                }
            }
        }
    }
}

/// One line of a replay fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedExchange {
    pub prompt_hash: String,
    pub prompt: String,
    pub reply: String,
}

/// Forwards to an inner transport and appends every exchange to a JSONL file.
pub struct Recorder<T> {
    inner: T,
    out: Mutex<File>,
    secrets: Vec<String>,
}

impl<T: ChatTransport> Recorder<T> {
    pub fn create(inner: T, path: &Path, secrets: Vec<String>) -> Result<Self, LlmError> {
        let out = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::Replay(format!("{}: {e}", path.display())))?;
        Ok(Recorder {
            inner,
            out: Mutex::new(out),
            secrets: secrets.into_iter().filter(|s| !s.is_empty()).collect(),
        })
    }

    fn scrub(&self, text: &str) -> String {
        self.secrets
            .iter()
            .fold(text.to_string(), |acc, s| acc.replace(s.as_str(), "[REDACTED]"))
    }
}

impl<T: ChatTransport> ChatTransport for Recorder<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let reply = self.inner.complete(request)?;
        let line = RecordedExchange {
            prompt_hash: request.prompt_hash(),
            prompt: self.scrub(&request.prompt_text()),
            reply: self.scrub(&reply),
        };
        let mut json = serde_json::to_string(&line).expect("exchange serializes");
        json.push('\n');
        self.out
            .lock()
            .expect("recorder lock poisoned")
            .write_all(json.as_bytes())
            .map_err(|e| LlmError::Replay(e.to_string()))?;
        Ok(reply)
    }
}

/// Serves recorded replies by prompt hash, in recording order, with no network.
pub struct Replayer {
    replies: Mutex<HashMap<String, VecDeque<String>>>,
}

impl Replayer {
    pub fn from_exchanges(exchanges: impl IntoIterator<Item = RecordedExchange>) -> Self {
        let mut replies: HashMap<String, VecDeque<String>> = HashMap::new();
        for e in exchanges {
            replies.entry(e.prompt_hash).or_default().push_back(e.reply);
        }
        Replayer {
            replies: Mutex::new(replies),
        }
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let file = File::open(path).map_err(|e| LlmError::Replay(format!("{}: {e}", path.display())))?;
        let mut exchanges = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| LlmError::Replay(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: RecordedExchange = serde_json::from_str(&line)
                .map_err(|e| LlmError::Replay(format!("line {}: {e}", n + 1)))?;
            exchanges.push(e);
        }
        Ok(Self::from_exchanges(exchanges))
    }
}

impl ChatTransport for Replayer {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let hash = request.prompt_hash();
        self.replies
            .lock()
            .expect("replayer lock poisoned")
            .get_mut(&hash)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| LlmError::Replay(format!("no recorded reply for prompt {hash}")))
    }
}
