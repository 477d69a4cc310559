//! Chat clients: a replaying client for tests and an HTTP client for
//! OpenAI-compatible chat-completions endpoints.

use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// Why a message was sent; lets transcripts be checked turn by turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    InitialPrompt,
    Reply,
    Observation,
    ErrorFeedback,
    Continue,
    Nudge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub kind: MessageKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
}

impl ChatMessage {
    pub fn user(kind: MessageKind, text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            kind,
            text: text.into(),
            image: None,
            payload: None,
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            kind: MessageKind::Reply,
            text: text.into(),
            image: None,
            payload: None,
        }
    }

    pub fn with_image(mut self, path: impl Into<String>) -> Self {
        self.image = Some(path.into());
        self
    }

    pub fn with_payload(mut self, payload: Value) -> Self {
        self.payload = Some(payload);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("cannot read image {path}: {reason}")]
    Image { path: String, reason: String },
    #[error("scripted transcript has no reply for turn {turn}")]
    ScriptExhausted { turn: usize },
    #[error("cannot load transcript {path}: {reason}")]
    Script { path: String, reason: String },
}

/// A multimodal chat model. Implementations must be callable from several
/// episodes at once.
pub trait ChatClient: Send + Sync {
    /// Next assistant reply for the conversation so far.
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError>;
}

/// Replays canned replies; the reply index is the number of assistant
/// messages already in the conversation, so the client holds no state.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedClient {
    pub replies: Vec<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptFile {
    List(Vec<String>),
    Object { replies: Vec<String> },
}

impl ScriptedClient {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self {
            replies: replies.into_iter().map(Into::into).collect(),
        }
    }

    /// Reads `{"replies": [...]}` or a bare JSON array of strings.
    pub fn from_file(path: &Path) -> Result<Self, ClientError> {
        let err = |reason: String| ClientError::Script {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let file: ScriptFile = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let replies = match file {
            ScriptFile::List(r) | ScriptFile::Object { replies: r } => r,
        };
        Ok(Self { replies })
    }
}

impl ChatClient for ScriptedClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError> {
        let turn = messages
            .iter()
            .filter(|m| m.role == Role::Assistant)
            .count();
        self.replies
            .get(turn)
            .cloned()
            .ok_or(ClientError::ScriptExhausted { turn })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveClientConfig {
    /// Base URL (e.g. `https://host/v1`) or the full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    /// Directory image paths in messages are resolved against.
    pub image_root: Option<PathBuf>,
}

impl Default for LiveClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 0.0,
            timeout_secs: 120,
            image_root: None,
        }
    }
}

pub struct LiveClient {
    cfg: LiveClientConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl LiveClient {
    pub fn new(cfg: LiveClientConfig) -> Result<Self, ClientError> {
        let api_key = std::env::var(&cfg.api_key_env)
            .map_err(|_| ClientError::MissingApiKey(cfg.api_key_env.clone()))?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build();
        Ok(Self {
            cfg,
            api_key,
            agent,
        })
    }

    fn url(&self) -> String {
        let base = self.cfg.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }

    fn image_url(&self, path: &str) -> Result<String, ClientError> {
        let full = match &self.cfg.image_root {
            Some(root) if Path::new(path).is_relative() => root.join(path),
            _ => PathBuf::from(path),
        };
        let bytes = std::fs::read(&full).map_err(|e| ClientError::Image {
            path: full.display().to_string(),
            reason: e.to_string(),
        })?;
        let mime = match full
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
        {
            Some(ref e) if e == "jpg" || e == "jpeg" => "image/jpeg",
            _ => "image/png",
        };
        let data = base64::engine::general_purpose::STANDARD.encode(bytes);
        Ok(format!("data:{mime};base64,{data}"))
    }

    /// Request body for `messages`, images inlined as data URLs.
    pub fn request_body(&self, messages: &[ChatMessage]) -> Result<Value, ClientError> {
        let mut wire = Vec::with_capacity(messages.len());
        for m in messages {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            let content = match &m.image {
                Some(path) => json!([
                    {"type": "text", "text": m.text},
                    {"type": "image_url", "image_url": {"url": self.image_url(path)?}},
                ]),
                None => json!(m.text),
            };
            wire.push(json!({"role": role, "content": content}));
        }
        Ok(json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": wire,
        }))
    }
}

impl ChatClient for LiveClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ClientError> {
        let body = self.request_body(messages)?;
        let resp = self
            .agent
            .post(&self.url())
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        let resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Status(status, r)) => {
                return Err(ClientError::Http {
                    status,
                    body: r.into_string().unwrap_or_default(),
                })
            }
            Err(e) => return Err(ClientError::Transport(e.to_string())),
        };
        let v: Value = resp
            .into_json()
            .map_err(|e| ClientError::Protocol(e.to_string()))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ClientError::Protocol("missing choices[0].message.content".into()))
    }
}
