//! Provider-agnostic chat completion.
//!
//! Two backends sit behind [`ChatBackend`]: a live chat-completions HTTP
//! client, and a stub that replays fixtures keyed by prompt hash and falls
//! back to rule-based synthesis. Nothing else in the crate talks to a model
//! provider directly.

pub mod http;
pub mod prompts;
pub mod stub;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::hashing::stable_hex;
use http::{HttpClient, RetryPolicy};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("no stub fixture for prompt hash {0}")]
    FixtureMiss(String),
    #[error("environment variable `{0}` with the API credential is not set")]
    MissingCredential(String),
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatPrompt {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatPrompt {
    /// Temperature 0, 512 tokens.
    pub fn new(system: &str, user: &str) -> Self {
        Self { system: system.to_string(), user: user.to_string(), temperature: 0.0, max_tokens: 512 }
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    /// Stable fixture key over the system and user text.
    pub fn hash(&self) -> String {
        stable_hex(&[&self.system, &self.user])
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &ChatPrompt) -> Result<String, LlmError>;
}

impl<F> ChatBackend for F
where
    F: Fn(&ChatPrompt) -> Result<String, LlmError> + Send + Sync,
{
    fn complete(&self, prompt: &ChatPrompt) -> Result<String, LlmError> {
        self(prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub requests_per_second: Option<f64>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StubConfig {
    /// Directory of `<prompt-hash>.txt` files.
    #[serde(default)]
    pub fixtures_dir: Option<PathBuf>,
    /// Rule-based replies on fixture misses.
    #[serde(default = "default_true")]
    pub synthesize: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendKind {
    Live(LiveConfig),
    Stub(StubConfig),
}

impl BackendKind {
    pub fn stub() -> Self {
        BackendKind::Stub(StubConfig { fixtures_dir: None, synthesize: true })
    }

    /// Resolves credentials and fixtures. A live backend without its
    /// credential variable fails here, before any request is made.
    pub fn build(&self) -> Result<Box<dyn ChatBackend>, LlmError> {
        Ok(match self {
            BackendKind::Live(cfg) => Box::new(LiveBackend::from_config(cfg)?),
            BackendKind::Stub(cfg) => {
                let mut stub = match &cfg.fixtures_dir {
                    Some(dir) => StubBackend::from_dir(dir)?,
                    None => StubBackend::default(),
                };
                stub.synthesize = cfg.synthesize;
                Box::new(stub)
            }
        })
    }
}

pub fn read_credential(env_var: &str) -> Result<String, LlmError> {
    std::env::var(env_var)
        .ok()
        .filter(|v| !v.trim().is_empty())
        .ok_or_else(|| LlmError::MissingCredential(env_var.to_string()))
}

#[derive(Debug)]
pub struct LiveBackend {
    client: HttpClient,
    endpoint: String,
    model: String,
    api_key: String,
}

impl LiveBackend {
    pub fn from_config(cfg: &LiveConfig) -> Result<Self, LlmError> {
        let api_key = read_credential(&cfg.api_key_env)?;
        Ok(Self::with_api_key(cfg, api_key))
    }

    pub fn with_api_key(cfg: &LiveConfig, api_key: String) -> Self {
        Self {
            client: HttpClient::new(cfg.retry, cfg.requests_per_second, cfg.max_in_flight),
            endpoint: cfg.endpoint.clone(),
            model: cfg.model.clone(),
            api_key,
        }
    }

    /// Completion text plus the number of HTTP attempts it took.
    pub fn complete_with_attempts(&self, prompt: &ChatPrompt) -> Result<(String, u32), LlmError> {
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": prompt.temperature,
            "max_tokens": prompt.max_tokens,
        });
        let (reply, attempts) = self.client.post_json(&self.endpoint, Some(&self.api_key), &body)?;
        let text = reply
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| LlmError::Malformed("missing choices[0].message.content".into()))?;
        Ok((text.to_string(), attempts))
    }
}

impl ChatBackend for LiveBackend {
    fn complete(&self, prompt: &ChatPrompt) -> Result<String, LlmError> {
        self.complete_with_attempts(prompt).map(|(text, _)| text)
    }
}

/// Pure backend: the reply depends only on the prompt and fixture table.
#[derive(Debug, Clone, Default)]
pub struct StubBackend {
    fixtures: HashMap<String, String>,
    pub synthesize: bool,
}

impl StubBackend {
    pub fn synthesizing() -> Self {
        Self { fixtures: HashMap::new(), synthesize: true }
    }

    pub fn with_fixtures(fixtures: HashMap<String, String>, synthesize: bool) -> Self {
        Self { fixtures, synthesize }
    }

    /// Loads every regular file in `dir`, keyed by file stem.
    pub fn from_dir(dir: &Path) -> Result<Self, LlmError> {
        let mut fixtures = HashMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if !path.is_file() {
                continue;
            }
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                fixtures.insert(stem.to_string(), std::fs::read_to_string(&path)?);
            }
        }
        Ok(Self { fixtures, synthesize: true })
    }

    pub fn insert(&mut self, prompt: &ChatPrompt, reply: &str) {
        self.fixtures.insert(prompt.hash(), reply.to_string());
    }
}

impl ChatBackend for StubBackend {
    fn complete(&self, prompt: &ChatPrompt) -> Result<String, LlmError> {
        let hash = prompt.hash();
        if let Some(reply) = self.fixtures.get(&hash) {
            return Ok(reply.clone());
        }
        if self.synthesize {
            stub::synthesize(prompt)
        } else {
            Err(LlmError::FixtureMiss(hash))
        }
    }
}
