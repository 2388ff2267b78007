//! Transcript sources for the session loop.

use std::collections::VecDeque;
use std::io::BufRead;
use std::path::Path;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptSource {
    Scripted,
    Typed,
    SttAdapter,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transcript {
    pub text: String,
    pub source: TranscriptSource,
    pub captured_at: DateTime<Utc>,
}

impl Transcript {
    pub fn new(text: impl Into<String>, source: TranscriptSource) -> Self {
        Self { text: text.into(), source, captured_at: Utc::now() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Heard {
    Transcript(Transcript),
    NoSpeech,
}

#[derive(Debug, Error)]
pub enum ListenerError {
    #[error("speech engine failed: {0}")]
    Engine(String),
    #[error("session script {path}: {source}")]
    Script { path: String, source: std::io::Error },
}

pub trait Listener: Send {
    /// Blocks for at most `timeout` waiting for the next utterance.
    fn next_transcript(&mut self, timeout: Duration) -> Result<Heard, ListenerError>;
}

/// Utterances read from a session script: one per line, blank lines and
/// `#` lines skipped.
#[derive(Debug, Clone, Default)]
pub struct ScriptedListener {
    queue: VecDeque<String>,
}

impl ScriptedListener {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(lines: I) -> Self {
        Self { queue: lines.into_iter().map(Into::into).collect() }
    }

    pub fn from_script(text: &str) -> Self {
        Self::new(parse_session_script(text))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ListenerError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ListenerError::Script { path: path.display().to_string(), source })?;
        Ok(Self::from_script(&text))
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }
}

pub fn parse_session_script(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

impl Listener for ScriptedListener {
    fn next_transcript(&mut self, _timeout: Duration) -> Result<Heard, ListenerError> {
        Ok(match self.queue.pop_front() {
            Some(text) => Heard::Transcript(Transcript::new(text, TranscriptSource::Scripted)),
            None => Heard::NoSpeech,
        })
    }
}

/// Text typed into a console or posted through the gateway.
pub struct TypedListener {
    rx: Receiver<String>,
}

impl TypedListener {
    pub fn new() -> (Sender<String>, Self) {
        let (tx, rx) = mpsc::channel();
        (tx, Self { rx })
    }
}

impl Listener for TypedListener {
    fn next_transcript(&mut self, timeout: Duration) -> Result<Heard, ListenerError> {
        loop {
            match self.rx.recv_timeout(timeout) {
                Ok(text) if text.trim().is_empty() => continue,
                Ok(text) => return Ok(Heard::Transcript(Transcript::new(text.trim(), TranscriptSource::Typed))),
                Err(RecvTimeoutError::Timeout) => return Ok(Heard::NoSpeech),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(ListenerError::Engine("typed input closed".into()));
                }
            }
        }
    }
}

/// Adapter for an external speech-to-text process that prints one
/// transcript per line. Lines starting with `ERROR` are engine failures.
pub struct LineStreamListener {
    rx: Mutex<Receiver<std::io::Result<String>>>,
}

impl LineStreamListener {
    pub fn new<R: BufRead + Send + 'static>(reader: R) -> Self {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in reader.lines() {
                let failed = line.is_err();
                if tx.send(line).is_err() || failed {
                    break;
                }
            }
        });
        Self { rx: Mutex::new(rx) }
    }
}

impl Listener for LineStreamListener {
    fn next_transcript(&mut self, timeout: Duration) -> Result<Heard, ListenerError> {
        let rx = self.rx.get_mut().unwrap_or_else(|e| e.into_inner());
        loop {
            match rx.recv_timeout(timeout) {
                Ok(Ok(line)) => {
                    let line = line.trim();
                    if let Some(msg) = line.strip_prefix("ERROR") {
                        return Err(ListenerError::Engine(msg.trim_start_matches([':', ' ']).to_string()));
                    }
                    if line.is_empty() {
                        continue;
                    }
                    return Ok(Heard::Transcript(Transcript::new(line, TranscriptSource::SttAdapter)));
                }
                Ok(Err(e)) => return Err(ListenerError::Engine(e.to_string())),
                Err(RecvTimeoutError::Timeout) => return Ok(Heard::NoSpeech),
                Err(RecvTimeoutError::Disconnected) => return Err(ListenerError::Engine("speech engine exited".into())),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn text(h: Heard) -> String {
        match h {
            Heard::Transcript(t) => t.text,
            Heard::NoSpeech => panic!("no speech"),
        }
    }

    #[test]
    fn scripted_in_order_then_silence() {
        let mut l = ScriptedListener::from_script("# demo\nMove a little down.\n\nStop\n");
        assert_eq!(text(l.next_transcript(Duration::from_millis(100)).unwrap()), "Move a little down.");
        assert_eq!(text(l.next_transcript(Duration::from_millis(100)).unwrap()), "Stop");
        assert_eq!(l.next_transcript(Duration::from_millis(100)).unwrap(), Heard::NoSpeech);
    }

    #[test]
    fn typed_times_out() {
        let (tx, mut l) = TypedListener::new();
        assert_eq!(l.next_transcript(Duration::from_millis(20)).unwrap(), Heard::NoSpeech);
        tx.send("hello".into()).unwrap();
        let h = l.next_transcript(Duration::from_millis(20)).unwrap();
        assert!(matches!(h, Heard::Transcript(t) if t.source == TranscriptSource::Typed && t.text == "hello"));
        drop(tx);
        assert!(matches!(l.next_transcript(Duration::from_millis(20)), Err(ListenerError::Engine(_))));
    }

    #[test]
    fn stream_adapter_reports_engine_failure() {
        let mut l = LineStreamListener::new(Cursor::new("check again\nERROR: model crashed\n"));
        assert_eq!(text(l.next_transcript(Duration::from_secs(1)).unwrap()), "check again");
        assert!(matches!(l.next_transcript(Duration::from_secs(1)), Err(ListenerError::Engine(m)) if m == "model crashed"));
    }
}
