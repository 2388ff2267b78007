//! Session event stream with a bounded replay buffer.

use std::collections::VecDeque;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::Serialize;
use tokio::sync::broadcast;

use crate::pose::Pose;
use crate::script::{ExecStatus, ExecutionReport};

pub const DEFAULT_REPLAY: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Serialized as `{"type": ..., "payload": {...}}` next to `seq` and `ts`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum EventKind {
    Transcript { text: String, source: String },
    Keyword { action: String, phrase: String },
    CodegenStarted { command_id: u64, utterance: String },
    CodegenResult {
        command_id: u64,
        utterance: String,
        ok: bool,
        code: Option<String>,
        top_level_function: Option<String>,
        error: Option<String>,
        latency_ms: f64,
    },
    AwaitingApproval { command_id: u64, utterance: String, code: String },
    ExecutionStarted { command_id: u64, utterance: String },
    Say { text: String },
    Pose { pose: Pose },
    ExecutionFinished { command_id: u64, status: ExecStatus, report: Box<ExecutionReport> },
    RecordingState { active: bool, steps: usize, awaiting: Option<String> },
    PolicySaved { name: String, file: String, learned: bool },
    Error { message: String, command_id: Option<u64> },
}

impl EventKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            EventKind::Transcript { .. } => "transcript",
            EventKind::Keyword { .. } => "keyword",
            EventKind::CodegenStarted { .. } => "codegen_started",
            EventKind::CodegenResult { .. } => "codegen_result",
            EventKind::AwaitingApproval { .. } => "awaiting_approval",
            EventKind::ExecutionStarted { .. } => "execution_started",
            EventKind::Say { .. } => "say",
            EventKind::Pose { .. } => "pose",
            EventKind::ExecutionFinished { .. } => "execution_finished",
            EventKind::RecordingState { .. } => "recording_state",
            EventKind::PolicySaved { .. } => "policy_saved",
            EventKind::Error { .. } => "error",
        }
    }
}

struct BusState {
    next_seq: u64,
    replay: VecDeque<Event>,
}

/// Publishes events to any number of subscribers. A new subscriber gets the
/// last `capacity` events followed by everything published afterwards, with
/// no gap and no duplicate.
pub struct EventBus {
    state: Mutex<BusState>,
    capacity: usize,
    tx: broadcast::Sender<Event>,
}

impl Default for EventBus {
    fn default() -> Self {
        Self::new(DEFAULT_REPLAY)
    }
}

impl EventBus {
    pub fn new(capacity: usize) -> Self {
        let (tx, _) = broadcast::channel(4096);
        Self { state: Mutex::new(BusState { next_seq: 1, replay: VecDeque::new() }), capacity, tx }
    }

    pub fn publish(&self, kind: EventKind) -> Event {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let event = Event { seq: state.next_seq, ts: Utc::now(), kind };
        state.next_seq += 1;
        state.replay.push_back(event.clone());
        while state.replay.len() > self.capacity {
            state.replay.pop_front();
        }
        // Sending under the lock keeps live order identical to seq order.
        let _ = self.tx.send(event.clone());
        event
    }

    pub fn subscribe(&self) -> (Vec<Event>, broadcast::Receiver<Event>) {
        let state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        (state.replay.iter().cloned().collect(), self.tx.subscribe())
    }

    /// Buffered events, oldest first.
    pub fn recent(&self) -> Vec<Event> {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).replay.iter().cloned().collect()
    }
}
