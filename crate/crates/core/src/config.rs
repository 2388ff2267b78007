//! Session configuration file and keyword dispatch.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::EndpointSettings;
use crate::script::ExecutionLimits;
use crate::world::{MotionMode, DEFAULT_SPEED, DEFAULT_TICK_HZ};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("keyword phrase '{0}' is bound more than once")]
    DuplicateKeyword(String),
    #[error("keyword phrase '{0}' is empty after normalization")]
    EmptyKeyword(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeywordAction {
    Stop,
    RecordPolicy,
    SavePolicy,
    DiscardRecording,
    ClearContext,
}

impl KeywordAction {
    pub fn as_str(&self) -> &'static str {
        match self {
            KeywordAction::Stop => "stop",
            KeywordAction::RecordPolicy => "record_policy",
            KeywordAction::SavePolicy => "save_policy",
            KeywordAction::DiscardRecording => "discard_recording",
            KeywordAction::ClearContext => "clear_context",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordBinding {
    pub phrase: String,
    pub action: KeywordAction,
}

pub fn default_keywords() -> Vec<KeywordBinding> {
    [
        ("stop", KeywordAction::Stop),
        ("record policy", KeywordAction::RecordPolicy),
        ("save policy", KeywordAction::SavePolicy),
        ("discard recording", KeywordAction::DiscardRecording),
        ("clear context", KeywordAction::ClearContext),
    ]
    .into_iter()
    .map(|(phrase, action)| KeywordBinding { phrase: phrase.into(), action })
    .collect()
}

/// Lowercase, punctuation removed, whitespace collapsed.
pub fn normalize_phrase(text: &str) -> String {
    let cleaned: String = text
        .chars()
        .filter(|c| !c.is_ascii_punctuation() && *c != '\u{2019}')
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Dispatch {
    Keyword(KeywordAction),
    Codegen(String),
}

/// A keyword fires only when the whole normalized transcript equals its
/// phrase; anything else goes to code generation unchanged.
pub fn dispatch(transcript: &str, bindings: &[KeywordBinding]) -> Dispatch {
    let norm = normalize_phrase(transcript);
    bindings
        .iter()
        .find(|b| normalize_phrase(&b.phrase) == norm)
        .map(|b| Dispatch::Keyword(b.action))
        .unwrap_or_else(|| Dispatch::Codegen(transcript.to_string()))
}

pub fn validate_keywords(bindings: &[KeywordBinding]) -> Result<(), ConfigError> {
    let mut seen = HashSet::new();
    for b in bindings {
        let n = normalize_phrase(&b.phrase);
        if n.is_empty() {
            return Err(ConfigError::EmptyKeyword(b.phrase.clone()));
        }
        if !seen.insert(n) {
            return Err(ConfigError::DuplicateKeyword(b.phrase.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ListenerKind {
    #[default]
    Scripted,
    Typed,
    Stt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ListenerConfig {
    pub kind: ListenerKind,
    /// Session script for the scripted listener.
    pub script: Option<PathBuf>,
    /// Command line of the speech-to-text adapter process.
    pub command: Vec<String>,
    pub timeout_secs: f64,
}

impl Default for ListenerConfig {
    fn default() -> Self {
        Self { kind: ListenerKind::Scripted, script: None, command: Vec::new(), timeout_secs: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmKind {
    #[default]
    Mock,
    Endpoint,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub kind: LlmKind,
    /// Mock fixture files, merged in order.
    pub fixtures: Vec<PathBuf>,
    pub endpoint: EndpointSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    pub mode: MotionMode,
    pub speed: f64,
    pub tick_hz: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self { mode: MotionMode::Instant, speed: DEFAULT_SPEED, tick_hz: DEFAULT_TICK_HZ }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub keywords: Vec<KeywordBinding>,
    pub context_capacity: usize,
    /// `None` means on for a remote endpoint and off for the mock.
    pub approval_required: Option<bool>,
    pub listener: ListenerConfig,
    pub llm: LlmConfig,
    pub world: PathBuf,
    pub registry: PathBuf,
    /// Where taught policies are written; defaults to the registry's folder.
    pub policies_dir: Option<PathBuf>,
    /// Replaces the bundled few-shot preamble.
    pub preamble: Option<PathBuf>,
    pub limits: ExecutionLimits,
    pub time_dilation: f64,
    pub max_rounds: usize,
    pub motion: MotionConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            keywords: default_keywords(),
            context_capacity: 3,
            approval_required: None,
            listener: ListenerConfig::default(),
            llm: LlmConfig::default(),
            world: PathBuf::from("world.json"),
            registry: PathBuf::from("registry.json"),
            policies_dir: None,
            preamble: None,
            limits: ExecutionLimits::default(),
            time_dilation: 1.0,
            max_rounds: 3,
            motion: MotionConfig::default(),
        }
    }
}

impl SessionConfig {
    /// Loads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg: SessionConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Json { path: path.into(), source })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.world);
        fix(&mut self.registry);
        self.policies_dir.iter_mut().for_each(fix);
        self.preamble.iter_mut().for_each(fix);
        self.listener.script.iter_mut().for_each(fix);
        self.llm.fixtures.iter_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_keywords(&self.keywords)?;
        if self.context_capacity == 0 {
            return Err(ConfigError::Invalid("context_capacity must be at least 1".into()));
        }
        if self.max_rounds == 0 {
            return Err(ConfigError::Invalid("max_rounds must be at least 1".into()));
        }
        let l = &self.limits;
        if !(l.wall_deadline > 0.0 && l.max_steps > 0 && l.max_loop_iterations > 0) {
            return Err(ConfigError::Invalid("execution limits must be positive".into()));
        }
        if self.time_dilation < 0.0 {
            return Err(ConfigError::Invalid("time_dilation must not be negative".into()));
        }
        Ok(())
    }

    pub fn approval_required(&self) -> bool {
        self.approval_required.unwrap_or(self.llm.kind == LlmKind::Endpoint)
    }

    pub fn policies_dir(&self) -> PathBuf {
        self.policies_dir
            .clone()
            .unwrap_or_else(|| self.registry.parent().map(Path::to_path_buf).unwrap_or_default())
    }
}
