use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{normalize_utterance, STOP_SEQUENCE};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("completion is empty")]
    Empty,
    #[error("no canned response for '{0}'")]
    NoCannedResponse(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("mock fixture: {0}")]
    Fixture(String),
}

/// Raw model output and how long the call took.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub elapsed: Duration,
}

pub trait CompletionClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<Completion, ClientError>;

    /// Whether completions come from a model outside this process.
    fn is_remote(&self) -> bool {
        false
    }
}

/// Calls `client` and keeps only the text before the stop sequence.
pub fn complete(prompt: &str, client: &dyn CompletionClient) -> Result<Completion, ClientError> {
    let mut c = client.complete(prompt)?;
    if let Some(i) = c.text.find(STOP_SEQUENCE) {
        c.text.truncate(i);
    }
    let trimmed = c.text.trim_end();
    if trimmed.trim().is_empty() {
        return Err(ClientError::Empty);
    }
    c.text = trimmed.trim_start_matches('\n').to_string();
    c.elapsed = c.elapsed.max(Duration::from_nanos(1));
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointSettings {
    /// Server root; requests go to `<base_url>/v1/completions`.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub max_tokens: u32,
    pub temperature: f64,
    pub timeout_secs: f64,
}

impl Default for EndpointSettings {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            model: "default".into(),
            api_key: None,
            max_tokens: 512,
            temperature: 0.0,
            timeout_secs: 60.0,
        }
    }
}

impl EndpointSettings {
    /// `LMPVC_LLM_URL` and `LMPVC_LLM_API_KEY` take precedence over the file.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(url) = std::env::var("LMPVC_LLM_URL") {
            self.base_url = url;
        }
        if let Ok(key) = std::env::var("LMPVC_LLM_API_KEY") {
            self.api_key = Some(key);
        }
        self
    }
}

/// Client for an OpenAI-style plain completion endpoint.
pub struct EndpointClient {
    settings: EndpointSettings,
    http: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    stop: [&'a str; 1],
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
}

impl EndpointClient {
    pub fn new(settings: EndpointSettings) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(settings.timeout_secs.max(0.001)))
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(Self { settings, http })
    }

    pub fn settings(&self) -> &EndpointSettings {
        &self.settings
    }
}

impl CompletionClient for EndpointClient {
    fn complete(&self, prompt: &str) -> Result<Completion, ClientError> {
        let url = format!("{}/v1/completions", self.settings.base_url.trim_end_matches('/'));
        let body = CompletionRequest {
            model: &self.settings.model,
            prompt,
            max_tokens: self.settings.max_tokens,
            temperature: self.settings.temperature,
            stop: [STOP_SEQUENCE],
        };
        let started = Instant::now();
        let mut req = self.http.post(url).json(&body);
        if let Some(key) = &self.settings.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(ClientError::Status { status: status.as_u16(), body });
        }
        let parsed: CompletionResponse = resp.json().map_err(|e| ClientError::Malformed(e.to_string()))?;
        let elapsed = started.elapsed();
        let text = parsed.choices.into_iter().next().map(|c| c.text).ok_or(ClientError::Empty)?;
        Ok(Completion { text, elapsed })
    }

    fn is_remote(&self) -> bool {
        true
    }
}

/// Canned completions keyed by normalized directive text. A `rounds` entry
/// answers successive requests for the same directive in turn, repeating
/// its last element.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockFixture {
    #[serde(default)]
    pub completions: HashMap<String, String>,
    #[serde(default)]
    pub rounds: HashMap<String, Vec<String>>,
}

impl MockFixture {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClientError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))
    }

    /// Adds the entries of `other`, which win on key collisions.
    pub fn merge(&mut self, other: MockFixture) {
        self.completions.extend(other.completions);
        self.rounds.extend(other.rounds);
    }
}

/// Offline client answering from a [`MockFixture`].
pub struct MockClient {
    completions: HashMap<String, String>,
    rounds: HashMap<String, Vec<String>>,
    state: Mutex<MockState>,
}

#[derive(Default)]
struct MockState {
    calls: HashMap<String, usize>,
    prompts: Vec<String>,
}

impl MockClient {
    pub fn new(fixture: MockFixture) -> Self {
        fn norm<V>(m: HashMap<String, V>) -> HashMap<String, V> {
            m.into_iter().map(|(k, v)| (normalize_utterance(&k), v)).collect()
        }
        Self { completions: norm(fixture.completions), rounds: norm(fixture.rounds), state: Mutex::default() }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ClientError> {
        Ok(Self::new(MockFixture::load(path)?))
    }

    /// Every prompt received so far.
    pub fn prompts(&self) -> Vec<String> {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).prompts.clone()
    }

    /// Forgets call counts so `rounds` sequences restart.
    pub fn reset(&self) {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        state.calls.clear();
        state.prompts.clear();
    }
}

/// The text of the last `#define function:` line in the prompt.
fn directive_key(prompt: &str) -> Option<String> {
    prompt.lines().rev().find_map(|l| l.trim().strip_prefix("#define function:")).map(normalize_utterance)
}

impl CompletionClient for MockClient {
    fn complete(&self, prompt: &str) -> Result<Completion, ClientError> {
        let started = Instant::now();
        let key = directive_key(prompt).ok_or_else(|| ClientError::NoCannedResponse("<no directive>".into()))?;
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        state.prompts.push(prompt.to_string());
        let text = if let Some(seq) = self.rounds.get(&key).filter(|s| !s.is_empty()) {
            let n = state.calls.entry(key.clone()).or_insert(0);
            let text = seq[(*n).min(seq.len() - 1)].clone();
            *n += 1;
            text
        } else if let Some(text) = self.completions.get(&key) {
            text.clone()
        } else {
            return Err(ClientError::NoCannedResponse(key));
        };
        Ok(Completion { text, elapsed: started.elapsed() })
    }
}
