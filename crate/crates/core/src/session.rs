//! One operator session: transcripts in, keyword actions or generated
//! programs out, with context retention, optional approval and the
//! policy-recording tap.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::codegen::{
    build_prompt, normalize_utterance, resolve_and_assemble, ClientError, CodegenError, CompletionClient,
    EndpointClient, Lmp, MockClient, MockFixture, DEFAULT_PREAMBLE,
};
use crate::config::{
    dispatch, validate_keywords, ConfigError, Dispatch, KeywordAction, KeywordBinding, LlmKind, SessionConfig,
};
use crate::events::{EventBus, EventKind};
use crate::listener::{Heard, Listener, ListenerError, Transcript, TranscriptSource};
use crate::policy::{load_registry, sanitize_name, Policy, PolicyError, PolicyRegistry, RecordingSession};
use crate::script::{execute, parse_program, static_check, ExecOptions, ExecStatus, ExecutionReport};
use crate::world::{load_world, MotionState, RobotApi, RobotEvent, SimWorld, WorldError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Idle,
    Listening,
    Generating,
    AwaitingApproval,
    Executing,
    RecordingName,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session is busy ({0:?})")]
    Busy(SessionStatus),
    #[error("no pending command with id {0}")]
    UnknownCommand(u64),
    #[error("no recording in progress")]
    NotRecording,
    #[error("a recording is already in progress")]
    AlreadyRecording,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Listener(#[from] ListenerError),
}

/// Everything needed to build a [`Session`].
pub struct SessionParts {
    pub world: Arc<SimWorld>,
    pub registry: PolicyRegistry,
    pub client: Arc<dyn CompletionClient>,
    pub preamble: String,
    pub keywords: Vec<KeywordBinding>,
    pub context_capacity: usize,
    pub approval_required: bool,
    pub policies_dir: PathBuf,
    pub exec: ExecOptions,
    pub max_rounds: usize,
}

impl SessionParts {
    pub fn new(world: Arc<SimWorld>, registry: PolicyRegistry, client: Arc<dyn CompletionClient>) -> Self {
        let policies_dir = registry.path().and_then(Path::parent).map(Path::to_path_buf).unwrap_or_default();
        let defaults = SessionConfig::default();
        Self {
            world,
            registry,
            approval_required: client.is_remote(),
            client,
            preamble: DEFAULT_PREAMBLE.to_string(),
            keywords: defaults.keywords,
            context_capacity: defaults.context_capacity,
            policies_dir,
            exec: ExecOptions::default(),
            max_rounds: defaults.max_rounds,
        }
    }
}

/// Result of running one command to completion (successfully or not).
#[derive(Debug, Clone, Serialize)]
pub struct CommandResult {
    pub command_id: u64,
    pub utterance: String,
    pub lmp: Option<Lmp>,
    pub report: ExecutionReport,
    /// Time spent waiting on the model.
    pub latency: Duration,
    pub rounds: usize,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum CommandOutcome {
    Completed(CommandResult),
    AwaitingApproval { command_id: u64, lmp: Lmp, latency: Duration, rounds: usize },
}

impl CommandOutcome {
    pub fn command_id(&self) -> u64 {
        match self {
            CommandOutcome::Completed(r) => r.command_id,
            CommandOutcome::AwaitingApproval { command_id, .. } => *command_id,
        }
    }
}

/// What one heard utterance led to.
#[derive(Debug, Clone)]
pub enum TurnOutcome {
    NoSpeech,
    Keyword(KeywordAction),
    Command(CommandOutcome),
    AwaitingName,
    AwaitingHint,
    PolicySaved(Policy),
    /// The turn could not be acted on; the message was also published as an
    /// error event.
    Refused(String),
}

/// Thread-safe view of a session for callers that must not wait for the
/// session itself (status polling and stop while a program runs).
#[derive(Clone)]
pub struct SessionHandle {
    world: Arc<SimWorld>,
    status: Arc<RwLock<SessionStatus>>,
    bus: Arc<EventBus>,
}

impl SessionHandle {
    pub fn status(&self) -> SessionStatus {
        *self.status.read().unwrap_or_else(|e| e.into_inner())
    }

    /// Halts motion and aborts the running program, if any.
    pub fn stop(&self) {
        self.world.stop();
    }

    pub fn bus(&self) -> &Arc<EventBus> {
        &self.bus
    }

    pub fn world(&self) -> &Arc<SimWorld> {
        &self.world
    }
}

struct Pending {
    command_id: u64,
    lmp: Lmp,
    latency: Duration,
    rounds: usize,
}

enum NameDialog {
    Name,
    Hint(String),
}

pub struct Session {
    world: Arc<SimWorld>,
    registry: PolicyRegistry,
    client: Arc<dyn CompletionClient>,
    preamble: String,
    keywords: Vec<KeywordBinding>,
    context: VecDeque<Lmp>,
    context_capacity: usize,
    approval_required: bool,
    policies_dir: PathBuf,
    exec: ExecOptions,
    max_rounds: usize,
    recording: Option<RecordingSession>,
    dialog: Option<NameDialog>,
    pending: Option<Pending>,
    status: Arc<RwLock<SessionStatus>>,
    bus: Arc<EventBus>,
    next_command: u64,
}

/// Builds the completion client a config asks for.
pub fn client_from_config(cfg: &SessionConfig) -> Result<Arc<dyn CompletionClient>, SessionError> {
    Ok(match cfg.llm.kind {
        LlmKind::Mock => {
            let mut fixture = MockFixture::default();
            for path in &cfg.llm.fixtures {
                fixture.merge(MockFixture::load(path)?);
            }
            Arc::new(MockClient::new(fixture))
        }
        LlmKind::Endpoint => Arc::new(EndpointClient::new(cfg.llm.endpoint.clone().with_env_overrides())?),
    })
}

impl Session {
    pub fn new(parts: SessionParts) -> Result<Self, SessionError> {
        validate_keywords(&parts.keywords)?;
        let bus = Arc::new(EventBus::default());
        let hook_bus = Arc::clone(&bus);
        parts.world.set_event_hook(Some(Arc::new(move |e: &RobotEvent| match e {
            RobotEvent::Pose(pose) => {
                hook_bus.publish(EventKind::Pose { pose: *pose });
            }
            RobotEvent::Say(text) => {
                hook_bus.publish(EventKind::Say { text: text.clone() });
            }
            RobotEvent::Gripper(_) => {}
        })));
        for err in parts.registry.errors() {
            tracing::warn!(policy = %err.name, "{}", err.message);
            bus.publish(EventKind::Error { message: format!("policy {}: {}", err.name, err.message), command_id: None });
        }
        Ok(Self {
            world: parts.world,
            registry: parts.registry,
            client: parts.client,
            preamble: parts.preamble,
            keywords: parts.keywords,
            context: VecDeque::new(),
            context_capacity: parts.context_capacity.max(1),
            approval_required: parts.approval_required,
            policies_dir: parts.policies_dir,
            exec: parts.exec,
            max_rounds: parts.max_rounds.max(1),
            recording: None,
            dialog: None,
            pending: None,
            status: Arc::new(RwLock::new(SessionStatus::Idle)),
            bus,
            next_command: 1,
        })
    }

    /// Loads the world, registry and client named in `cfg`. A missing
    /// registry file starts an empty registry at that path.
    pub fn from_config(cfg: &SessionConfig) -> Result<Self, SessionError> {
        cfg.validate()?;
        let model = load_world(&cfg.world)?;
        let motion = MotionState {
            mode: cfg.motion.mode,
            speed: cfg.motion.speed,
            tick_hz: cfg.motion.tick_hz,
            ..MotionState::default()
        };
        let world = Arc::new(SimWorld::with_motion(model, motion));
        let registry = if cfg.registry.exists() {
            load_registry(&cfg.registry)?
        } else {
            PolicyRegistry::empty(Some(cfg.registry.clone()))
        };
        let preamble = match &cfg.preamble {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.clone(), source })?,
            None => DEFAULT_PREAMBLE.to_string(),
        };
        let mut parts = SessionParts::new(world, registry, client_from_config(cfg)?);
        parts.preamble = preamble;
        parts.keywords = cfg.keywords.clone();
        parts.context_capacity = cfg.context_capacity;
        parts.approval_required = cfg.approval_required();
        parts.policies_dir = cfg.policies_dir();
        parts.exec = ExecOptions { limits: cfg.limits, time_dilation: cfg.time_dilation };
        parts.max_rounds = cfg.max_rounds;
        Session::new(parts)
    }

    pub fn handle(&self) -> SessionHandle {
        SessionHandle { world: Arc::clone(&self.world), status: Arc::clone(&self.status), bus: Arc::clone(&self.bus) }
    }

    pub fn status(&self) -> SessionStatus {
        *self.status.read().unwrap_or_else(|e| e.into_inner())
    }

    fn set_status(&self, s: SessionStatus) {
        *self.status.write().unwrap_or_else(|e| e.into_inner()) = s;
    }

    pub fn bus(&self) -> &Arc<EventBus> {
        &self.bus
    }

    pub fn world(&self) -> &Arc<SimWorld> {
        &self.world
    }

    pub fn registry(&self) -> &PolicyRegistry {
        &self.registry
    }

    pub fn context(&self) -> Vec<Lmp> {
        self.context.iter().cloned().collect()
    }

    pub fn approval_required(&self) -> bool {
        self.approval_required
    }

    pub fn set_approval_required(&mut self, on: bool) {
        self.approval_required = on;
    }

    pub fn exec_options(&self) -> ExecOptions {
        self.exec
    }

    pub fn recording(&self) -> Option<&RecordingSession> {
        self.recording.as_ref()
    }

    pub fn pending_command(&self) -> Option<(u64, &Lmp)> {
        self.pending.as_ref().map(|p| (p.command_id, &p.lmp))
    }

    /// Id the next generated command will get.
    pub fn next_command_id(&self) -> u64 {
        self.next_command
    }

    /// True while the save-policy dialog is waiting for a name or hint.
    pub fn in_naming_dialog(&self) -> bool {
        self.dialog.is_some()
    }

    pub fn keywords(&self) -> &[KeywordBinding] {
        &self.keywords
    }

    fn error(&self, message: impl Into<String>, command_id: Option<u64>) -> String {
        let message = message.into();
        self.bus.publish(EventKind::Error { message: message.clone(), command_id });
        message
    }

    fn publish_recording_state(&self) {
        let awaiting = match &self.dialog {
            Some(NameDialog::Name) => Some("name".to_string()),
            Some(NameDialog::Hint(_)) => Some("hint".to_string()),
            None => None,
        };
        self.bus.publish(EventKind::RecordingState {
            active: self.recording.is_some(),
            steps: self.recording.as_ref().map_or(0, |r| r.steps.len()),
            awaiting,
        });
    }

    /// Waits for one utterance and acts on it.
    pub fn listen_once(&mut self, listener: &mut dyn Listener, timeout: Duration) -> Result<TurnOutcome, SessionError> {
        let previous = self.status();
        if previous == SessionStatus::Idle {
            self.set_status(SessionStatus::Listening);
        }
        let heard = listener.next_transcript(timeout);
        if previous == SessionStatus::Idle {
            self.set_status(SessionStatus::Idle);
        }
        match heard? {
            Heard::Transcript(t) => Ok(self.handle_transcript(&t)),
            Heard::NoSpeech => Ok(TurnOutcome::NoSpeech),
        }
    }

    pub fn handle_transcript(&mut self, t: &Transcript) -> TurnOutcome {
        let source = match t.source {
            TranscriptSource::Scripted => "scripted",
            TranscriptSource::Typed => "typed",
            TranscriptSource::SttAdapter => "stt_adapter",
        };
        self.bus.publish(EventKind::Transcript { text: t.text.clone(), source: source.into() });
        let text = t.text.trim();
        if text.is_empty() {
            return TurnOutcome::Refused(self.error("empty transcript", None));
        }
        let action = dispatch(text, &self.keywords);
        if let Some(dialog) = self.dialog.take() {
            if let Dispatch::Keyword(action @ (KeywordAction::Stop | KeywordAction::DiscardRecording)) = action {
                self.set_status(SessionStatus::Idle);
                return self.keyword(action, text);
            }
            return match dialog {
                NameDialog::Name => {
                    self.dialog = Some(NameDialog::Hint(text.to_string()));
                    self.world.say("What is the hint for this policy?");
                    self.publish_recording_state();
                    TurnOutcome::AwaitingHint
                }
                NameDialog::Hint(name) => {
                    self.set_status(SessionStatus::Idle);
                    match self.save_recording(&name, text) {
                        Ok(p) => TurnOutcome::PolicySaved(p),
                        Err(e) => {
                            self.publish_recording_state();
                            TurnOutcome::Refused(self.error(e.to_string(), None))
                        }
                    }
                }
            };
        }
        match action {
            Dispatch::Keyword(action) => self.keyword(action, text),
            Dispatch::Codegen(utterance) => match self.run_command(&utterance) {
                Ok(outcome) => TurnOutcome::Command(outcome),
                Err(e) => TurnOutcome::Refused(self.error(e.to_string(), None)),
            },
        }
    }

    fn keyword(&mut self, action: KeywordAction, phrase: &str) -> TurnOutcome {
        self.bus.publish(EventKind::Keyword { action: action.as_str().into(), phrase: phrase.into() });
        match action {
            KeywordAction::Stop => {
                self.world.stop();
                if let Some(p) = self.pending.take() {
                    self.bus.publish(EventKind::Error { message: "command rejected by stop".into(), command_id: Some(p.command_id) });
                    self.set_status(SessionStatus::Idle);
                }
            }
            KeywordAction::RecordPolicy => {
                if let Err(e) = self.start_recording() {
                    return TurnOutcome::Refused(self.error(e.to_string(), None));
                }
            }
            KeywordAction::SavePolicy => {
                match &self.recording {
                    None => return TurnOutcome::Refused(self.error(SessionError::NotRecording.to_string(), None)),
                    Some(r) if r.is_empty() => {
                        return TurnOutcome::Refused(self.error(PolicyError::EmptyRecording.to_string(), None));
                    }
                    Some(_) => {}
                }
                self.dialog = Some(NameDialog::Name);
                self.set_status(SessionStatus::RecordingName);
                self.world.say("What should the new policy be called?");
                self.publish_recording_state();
                return TurnOutcome::AwaitingName;
            }
            KeywordAction::DiscardRecording => {
                self.recording = None;
                self.dialog = None;
                self.publish_recording_state();
            }
            KeywordAction::ClearContext => self.context.clear(),
        }
        TurnOutcome::Keyword(action)
    }

    pub fn start_recording(&mut self) -> Result<(), SessionError> {
        if self.recording.is_some() {
            return Err(SessionError::AlreadyRecording);
        }
        self.recording = Some(RecordingSession::new());
        self.publish_recording_state();
        Ok(())
    }

    /// Finalizes the recording into a learned policy, writes it and enables
    /// it. Name and hint are normalized the way spoken input is.
    pub fn save_recording(&mut self, name: &str, hint: &str) -> Result<Policy, SessionError> {
        let recording = self.recording.as_ref().ok_or(SessionError::NotRecording)?;
        let mut policy = recording.finalize(&normalize_utterance(name), &normalize_utterance(hint))?;
        let file = self.policy_file_for(&policy.name);
        policy.learned = true;
        self.registry.add(policy.clone(), file)?;
        let saved = self.registry.get(&policy.name).cloned().unwrap_or(policy);
        self.recording = None;
        self.dialog = None;
        self.bus.publish(EventKind::PolicySaved {
            name: saved.name.clone(),
            file: saved.source_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            learned: true,
        });
        self.publish_recording_state();
        Ok(saved)
    }

    pub fn discard_recording(&mut self) {
        self.recording = None;
        self.dialog = None;
        if self.status() == SessionStatus::RecordingName {
            self.set_status(SessionStatus::Idle);
        }
        self.publish_recording_state();
    }

    /// Registry file entry for a policy called `name`, relative when it
    /// lives next to the registry.
    pub fn policy_file_for(&self, name: &str) -> PathBuf {
        let file = format!("{name}.policy");
        let registry_dir = self.registry.path().and_then(Path::parent).map(Path::to_path_buf).unwrap_or_default();
        if self.policies_dir == registry_dir {
            PathBuf::from(file)
        } else {
            self.policies_dir.join(file)
        }
    }

    pub fn put_policy(&mut self, name: &str, text: &str) -> Result<Policy, SessionError> {
        sanitize_name(name)?;
        let file = self.policy_file_for(name);
        self.registry.put(name, text, file)?;
        Ok(self.registry.get(name).cloned().expect("policy just stored"))
    }

    pub fn delete_policy(&mut self, name: &str) -> Result<Policy, SessionError> {
        Ok(self.registry.remove(name)?)
    }

    pub fn set_policy_enabled(&mut self, name: &str, enabled: bool) -> Result<(), SessionError> {
        Ok(self.registry.set_enabled(name, enabled)?)
    }

    pub fn clear_context(&mut self) {
        self.context.clear();
    }

    /// Generates a program for `utterance` and runs it, or parks it for
    /// approval when the approval gate is on.
    pub fn run_command(&mut self, utterance: &str) -> Result<CommandOutcome, SessionError> {
        let status = self.status();
        if status != SessionStatus::Idle && status != SessionStatus::Listening {
            return Err(SessionError::Busy(status));
        }
        let command_id = self.next_command;
        self.next_command += 1;
        self.set_status(SessionStatus::Generating);
        self.bus.publish(EventKind::CodegenStarted { command_id, utterance: utterance.to_string() });

        let context: Vec<Lmp> = self.context.iter().cloned().collect();
        let prompt = build_prompt(&self.preamble, &self.registry.prompt_extension(), &context, utterance);
        let known = self.registry.known_names();
        let generated = resolve_and_assemble(utterance, &prompt, self.client.as_ref(), &known, self.max_rounds);

        let generation = match generated {
            Ok(g) => g,
            Err(err) => {
                let (status, code) = match &err {
                    CodegenError::Parse { code, .. } => (ExecStatus::ParseError, Some(code.clone())),
                    _ => (ExecStatus::GenerationFailed, None),
                };
                let report = ExecutionReport::failed(status, err.to_string());
                self.bus.publish(EventKind::CodegenResult {
                    command_id,
                    utterance: utterance.to_string(),
                    ok: false,
                    code,
                    top_level_function: None,
                    error: Some(err.to_string()),
                    latency_ms: 0.0,
                });
                self.bus.publish(EventKind::ExecutionFinished { command_id, status, report: Box::new(report.clone()) });
                self.set_status(SessionStatus::Idle);
                return Ok(CommandOutcome::Completed(CommandResult {
                    command_id,
                    utterance: utterance.to_string(),
                    lmp: None,
                    report,
                    latency: Duration::ZERO,
                    rounds: 0,
                }));
            }
        };
        let latency = generation.latency();
        let lmp = generation.lmp;
        self.bus.publish(EventKind::CodegenResult {
            command_id,
            utterance: utterance.to_string(),
            ok: true,
            code: Some(lmp.code_text.clone()),
            top_level_function: Some(lmp.top_level_function.clone()),
            error: None,
            latency_ms: latency.as_secs_f64() * 1000.0,
        });

        if self.approval_required {
            self.bus.publish(EventKind::AwaitingApproval {
                command_id,
                utterance: utterance.to_string(),
                code: lmp.code_text.clone(),
            });
            self.pending = Some(Pending { command_id, lmp: lmp.clone(), latency, rounds: generation.rounds });
            self.set_status(SessionStatus::AwaitingApproval);
            return Ok(CommandOutcome::AwaitingApproval { command_id, lmp, latency, rounds: generation.rounds });
        }
        Ok(CommandOutcome::Completed(self.execute_lmp(command_id, lmp, latency, generation.rounds)))
    }

    pub fn approve(&mut self, command_id: u64) -> Result<CommandResult, SessionError> {
        match &self.pending {
            Some(p) if p.command_id == command_id => {}
            _ => return Err(SessionError::UnknownCommand(command_id)),
        }
        let p = self.pending.take().expect("checked above");
        Ok(self.execute_lmp(p.command_id, p.lmp, p.latency, p.rounds))
    }

    pub fn reject(&mut self, command_id: u64) -> Result<(), SessionError> {
        match &self.pending {
            Some(p) if p.command_id == command_id => {}
            _ => return Err(SessionError::UnknownCommand(command_id)),
        }
        self.pending = None;
        let report = ExecutionReport::failed(ExecStatus::Aborted, "rejected by operator");
        self.bus.publish(EventKind::ExecutionFinished { command_id, status: report.status, report: Box::new(report) });
        self.set_status(SessionStatus::Idle);
        Ok(())
    }

    fn execute_lmp(&mut self, command_id: u64, lmp: Lmp, latency: Duration, rounds: usize) -> CommandResult {
        let utterance = lmp.utterance.clone();
        let report = self.check_and_run(command_id, &lmp);
        self.bus.publish(EventKind::ExecutionFinished { command_id, status: report.status, report: Box::new(report.clone()) });
        if report.is_ok() {
            self.context.push_back(lmp.clone());
            while self.context.len() > self.context_capacity {
                self.context.pop_front();
            }
            if let Some(rec) = &mut self.recording {
                rec.record_step(lmp.clone());
                self.publish_recording_state();
            }
        }
        self.set_status(SessionStatus::Idle);
        CommandResult { command_id, utterance, lmp: Some(lmp), report, latency, rounds }
    }

    fn check_and_run(&mut self, command_id: u64, lmp: &Lmp) -> ExecutionReport {
        let program = match parse_program(&lmp.code_text) {
            Ok(p) => p,
            Err(e) => return ExecutionReport::failed(ExecStatus::ParseError, e.to_string()),
        };
        let bindings = match self.registry.execution_bindings() {
            Ok(b) => b,
            Err(e) => return ExecutionReport::failed(ExecStatus::StaticCheckFailed, e.to_string()),
        };
        if let Err(problems) = static_check(&program, &bindings) {
            let names: Vec<String> = problems.iter().map(ToString::to_string).collect();
            let mut report = ExecutionReport::failed(
                ExecStatus::StaticCheckFailed,
                format!("undefined: {}", names.join(", ")),
            );
            report.undefined_names = names;
            return report;
        }
        self.set_status(SessionStatus::Executing);
        self.bus.publish(EventKind::ExecutionStarted { command_id, utterance: lmp.utterance.clone() });
        self.world.begin_execution();
        let abort = self.world.abort_flag();
        let report = execute(&program, &lmp.top_level_function, &bindings, self.world.as_ref(), &abort, &self.exec);
        self.world.end_execution();
        report
    }
}
