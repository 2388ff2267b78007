//! REST and WebSocket front end for one operator session.
//!
//! Routes are listed in `docs/gateway.md`. Commands are serialized: while a
//! program is generating or running, further submissions get 409, except
//! `stop`, which always goes through.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lmpvc_core::config::{dispatch, Dispatch, KeywordAction, KeywordBinding};
use lmpvc_core::listener::{Transcript, TranscriptSource};
use lmpvc_core::policy::{Policy, PolicyError};
use lmpvc_core::session::{Session, SessionError, SessionHandle, TurnOutcome};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;

/// Environment variable holding the optional shared bearer token.
pub const TOKEN_ENV: &str = "LMPVC_TOKEN";

struct Gateway {
    session: Mutex<Session>,
    handle: SessionHandle,
    keywords: Vec<KeywordBinding>,
    busy: AtomicBool,
    token: Option<String>,
}

#[derive(Clone)]
pub struct AppState(Arc<Gateway>);

impl AppState {
    /// Wraps `session`. With a `token`, every route requires
    /// `Authorization: Bearer <token>` (or `?token=` on `/ws`).
    pub fn new(session: Session, token: Option<String>) -> Self {
        let handle = session.handle();
        let keywords = session.keywords().to_vec();
        AppState(Arc::new(Gateway {
            session: Mutex::new(session),
            handle,
            keywords,
            busy: AtomicBool::new(false),
            token: token.filter(|t| !t.is_empty()),
        }))
    }

    pub fn handle(&self) -> &SessionHandle {
        &self.0.handle
    }

    /// Runs `f` with the session locked, on a blocking thread.
    pub async fn with_session<T: Send + 'static>(&self, f: impl FnOnce(&mut Session) -> T + Send + 'static) -> T {
        let g = Arc::clone(&self.0);
        tokio::task::spawn_blocking(move || f(&mut lock(&g.session)))
            .await
            .expect("session task panicked")
    }

    fn try_busy(&self) -> Result<BusyGuard, ApiError> {
        self.0
            .busy
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .map(|_| BusyGuard(Arc::clone(&self.0)))
            .map_err(|_| ApiError::new(StatusCode::CONFLICT, "session is busy"))
    }
}

fn lock(m: &Mutex<Session>) -> MutexGuard<'_, Session> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

struct BusyGuard(Arc<Gateway>);

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::SeqCst);
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, body: json!({ "error": message.into() }) }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<PolicyError> for ApiError {
    fn from(e: PolicyError) -> Self {
        let status = match &e {
            PolicyError::Unknown(_) => StatusCode::NOT_FOUND,
            PolicyError::InvalidName(_) => StatusCode::BAD_REQUEST,
            PolicyError::Conflict { .. } | PolicyError::NameTaken(_) => StatusCode::CONFLICT,
            PolicyError::Io { .. } | PolicyError::Json(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        let line = match &e {
            PolicyError::Body(p) => Some(p.line),
            PolicyError::BadImport { line, .. } => Some(*line),
            _ => None,
        };
        let message = e.to_string();
        let mut err = ApiError::new(status, message.clone());
        if status == StatusCode::UNPROCESSABLE_ENTITY {
            err.body["diagnostics"] = json!([{ "line": line, "message": message }]);
        }
        err
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Policy(p) => p.into(),
            SessionError::UnknownCommand(_) => ApiError::new(StatusCode::NOT_FOUND, e.to_string()),
            SessionError::Busy(_) | SessionError::AlreadyRecording | SessionError::NotRecording => {
                ApiError::new(StatusCode::CONFLICT, e.to_string())
            }
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/command", post(submit_command))
        .route("/api/commands/{id}/approve", post(approve))
        .route("/api/commands/{id}/reject", post(reject))
        .route("/api/policies", get(list_policies))
        .route("/api/policies/{name}", get(get_policy).put(put_policy).delete(delete_policy))
        .route("/api/policies/{name}/enable", post(enable_policy))
        .route("/api/policies/{name}/disable", post(disable_policy))
        .route("/api/recording/start", post(start_recording))
        .route("/api/recording/save", post(save_recording))
        .route("/api/recording/discard", post(discard_recording))
        .route("/api/world", get(world))
        .route("/api/session", get(session_state))
        .route("/api/stop", post(stop))
        .route("/ws", get(ws))
        .layer(middleware::from_fn_with_state(state.clone(), auth))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "gateway listening");
    axum::serve(listener, router(state)).await
}

async fn auth(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let Some(token) = &state.0.token else {
        return next.run(req).await;
    };
    let header_ok = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|t| t == token);
    let query_ok = req.uri().path() == "/ws"
        && req.uri().query().is_some_and(|q| q.split('&').any(|kv| kv.strip_prefix("token=") == Some(token.as_str())));
    if header_ok || query_ok {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong bearer token").into_response()
    }
}

#[derive(Debug, Deserialize)]
struct CommandRequest {
    text: String,
}

fn outcome_json(outcome: &TurnOutcome) -> (StatusCode, Value) {
    match outcome {
        TurnOutcome::NoSpeech => (StatusCode::OK, json!({ "outcome": "no_speech" })),
        TurnOutcome::Keyword(a) => (StatusCode::OK, json!({ "outcome": "keyword", "action": a.as_str() })),
        TurnOutcome::Command(c) => (StatusCode::OK, json!({ "outcome": "command", "command_id": c.command_id() })),
        TurnOutcome::AwaitingName => (StatusCode::OK, json!({ "outcome": "awaiting_name" })),
        TurnOutcome::AwaitingHint => (StatusCode::OK, json!({ "outcome": "awaiting_hint" })),
        TurnOutcome::PolicySaved(p) => (StatusCode::OK, json!({ "outcome": "policy_saved", "policy": policy_info(p) })),
        TurnOutcome::Refused(m) => (StatusCode::UNPROCESSABLE_ENTITY, json!({ "outcome": "refused", "error": m })),
    }
}

/// Submits text as a typed transcript. Commands run in the background and
/// answer 202 with their id; keywords and naming-dialog turns are handled
/// before the response.
async fn submit_command(State(state): State<AppState>, Json(req): Json<CommandRequest>) -> ApiResult<Response> {
    let text = req.text.trim().to_string();
    if text.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "text must not be empty"));
    }
    let keyword = match dispatch(&text, &state.0.keywords) {
        Dispatch::Keyword(a) => Some(a),
        Dispatch::Codegen(_) => None,
    };
    if keyword == Some(KeywordAction::Stop) && state.0.busy.load(Ordering::SeqCst) {
        state.handle().stop();
        state.handle().bus().publish(lmpvc_core::events::EventKind::Keyword {
            action: KeywordAction::Stop.as_str().into(),
            phrase: text,
        });
        return Ok((StatusCode::ACCEPTED, Json(json!({ "outcome": "keyword", "action": "stop" }))).into_response());
    }
    let guard = state.try_busy()?;
    let (is_command, next_id, pending) = state
        .with_session(move |s| {
            let is_command = keyword.is_none() && !s.in_naming_dialog();
            (is_command, s.next_command_id(), s.pending_command().is_some())
        })
        .await;
    if !is_command {
        let outcome = state
            .with_session(move |s| s.handle_transcript(&Transcript::new(text, TranscriptSource::Typed)))
            .await;
        drop(guard);
        let (status, body) = outcome_json(&outcome);
        return Ok((status, Json(body)).into_response());
    }
    if pending {
        return Err(ApiError::new(StatusCode::CONFLICT, "a command is awaiting approval"));
    }
    let g = Arc::clone(&state.0);
    tokio::task::spawn_blocking(move || {
        let _guard = guard;
        let outcome = lock(&g.session).handle_transcript(&Transcript::new(text, TranscriptSource::Typed));
        tracing::debug!(?outcome, "command finished");
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "command_id": next_id }))).into_response())
}

async fn approve(State(state): State<AppState>, Path(id): Path<u64>) -> ApiResult<Response> {
    let guard = state.try_busy()?;
    let pending = state.with_session(move |s| s.pending_command().map(|(pid, _)| pid)).await;
    if pending != Some(id) {
        return Err(SessionError::UnknownCommand(id).into());
    }
    let g = Arc::clone(&state.0);
    tokio::task::spawn_blocking(move || {
        let _guard = guard;
        if let Err(e) = lock(&g.session).approve(id) {
            tracing::warn!("approve {id}: {e}");
        }
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "command_id": id }))).into_response())
}

async fn reject(State(state): State<AppState>, Path(id): Path<u64>) -> ApiResult<Json<Value>> {
    let _guard = state.try_busy()?;
    state.with_session(move |s| s.reject(id)).await?;
    Ok(Json(json!({ "command_id": id, "rejected": true })))
}

#[derive(Debug, Serialize)]
struct PolicyInfo {
    name: String,
    file: String,
    enabled: bool,
    learned: bool,
    hint: Option<String>,
    entry_function: Option<String>,
    error: Option<String>,
}

fn policy_info(p: &Policy) -> Value {
    json!({
        "name": p.name,
        "file": p.source_path.as_ref().map(|f| f.display().to_string()),
        "learned": p.learned,
        "hint": p.hint_utterance,
        "entry_function": p.entry_function,
    })
}

async fn list_policies(State(state): State<AppState>) -> Json<Vec<PolicyInfo>> {
    let list = state
        .with_session(|s| {
            let reg = s.registry();
            reg.entries()
                .iter()
                .map(|e| {
                    let p = reg.get(&e.name);
                    PolicyInfo {
                        name: e.name.clone(),
                        file: e.file.display().to_string(),
                        enabled: e.enabled,
                        learned: e.learned,
                        hint: p.map(|p| p.hint_utterance.clone()),
                        entry_function: p.map(|p| p.entry_function.clone()),
                        error: reg.errors().iter().find(|x| x.name == e.name).map(|x| x.message.clone()),
                    }
                })
                .collect()
        })
        .await;
    Json(list)
}

async fn get_policy(State(state): State<AppState>, Path(name): Path<String>) -> ApiResult<Response> {
    let found = state
        .with_session(move |s| {
            let reg = s.registry();
            if let Some(p) = reg.get(&name) {
                return Ok(p.serialize());
            }
            match reg.errors().iter().find(|e| e.name == name) {
                Some(e) => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.message.clone())),
                None if reg.entry(&name).is_some() => {
                    Err(ApiError::new(StatusCode::CONFLICT, format!("policy '{name}' is disabled and not loaded")))
                }
                None => Err(PolicyError::Unknown(name).into()),
            }
        })
        .await?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], found).into_response())
}

async fn put_policy(State(state): State<AppState>, Path(name): Path<String>, body: String) -> ApiResult<Json<Value>> {
    let _guard = state.try_busy()?;
    let p = state.with_session(move |s| s.put_policy(&name, &body)).await?;
    Ok(Json(policy_info(&p)))
}

async fn delete_policy(State(state): State<AppState>, Path(name): Path<String>) -> ApiResult<Json<Value>> {
    let _guard = state.try_busy()?;
    let p = state.with_session(move |s| s.delete_policy(&name)).await?;
    Ok(Json(json!({ "deleted": p.name })))
}

async fn set_enabled(state: AppState, name: String, enabled: bool) -> ApiResult<Json<Value>> {
    let _guard = state.try_busy()?;
    let n = name.clone();
    state.with_session(move |s| s.set_policy_enabled(&n, enabled)).await?;
    Ok(Json(json!({ "name": name, "enabled": enabled })))
}

async fn enable_policy(State(state): State<AppState>, Path(name): Path<String>) -> ApiResult<Json<Value>> {
    set_enabled(state, name, true).await
}

async fn disable_policy(State(state): State<AppState>, Path(name): Path<String>) -> ApiResult<Json<Value>> {
    set_enabled(state, name, false).await
}

async fn start_recording(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    let _guard = state.try_busy()?;
    state.with_session(|s| s.start_recording()).await?;
    Ok(Json(json!({ "recording": true })))
}

#[derive(Debug, Deserialize)]
struct SaveRequest {
    name: String,
    hint: String,
}

async fn save_recording(State(state): State<AppState>, Json(req): Json<SaveRequest>) -> ApiResult<Json<Value>> {
    if req.name.trim().is_empty() || req.hint.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "name and hint must not be empty"));
    }
    let _guard = state.try_busy()?;
    let p = state.with_session(move |s| s.save_recording(&req.name, &req.hint)).await?;
    Ok(Json(policy_info(&p)))
}

async fn discard_recording(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    let _guard = state.try_busy()?;
    state.with_session(|s| s.discard_recording()).await;
    Ok(Json(json!({ "recording": false })))
}

async fn world(State(state): State<AppState>) -> Json<Value> {
    Json(serde_json::to_value(state.handle().world().snapshot()).unwrap_or(Value::Null))
}

/// Status is always available; the rest only when no command holds the
/// session.
async fn session_state(State(state): State<AppState>) -> Json<Value> {
    let status = state.handle().status();
    let busy = state.0.busy.load(Ordering::SeqCst);
    let mut body = json!({ "status": status, "busy": busy });
    if let Ok(s) = state.0.session.try_lock() {
        body["approval_required"] = json!(s.approval_required());
        body["recording"] = json!({
            "active": s.recording().is_some(),
            "steps": s.recording().map_or(0, |r| r.steps.len()),
        });
        body["pending"] = match s.pending_command() {
            Some((id, lmp)) => json!({ "command_id": id, "utterance": lmp.utterance, "code": lmp.code_text }),
            None => Value::Null,
        };
        body["context"] = json!(s.context().iter().map(|l| l.utterance.clone()).collect::<Vec<_>>());
    }
    Json(body)
}

async fn stop(State(state): State<AppState>) -> Json<Value> {
    state.handle().stop();
    Json(json!({ "stopped": true }))
}

async fn ws(State(state): State<AppState>, upgrade: WebSocketUpgrade) -> Response {
    upgrade.on_upgrade(move |socket| stream_events(socket, state))
}

async fn stream_events(mut socket: WebSocket, state: AppState) {
    let (replay, mut rx) = state.handle().bus().subscribe();
    let mut last_seq = 0;
    for event in replay {
        last_seq = event.seq;
        if send_event(&mut socket, &event).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
            event = rx.recv() => match event {
                Ok(event) if event.seq > last_seq => {
                    last_seq = event.seq;
                    if send_event(&mut socket, &event).await.is_err() {
                        return;
                    }
                }
                Ok(_) => {}
                Err(RecvError::Lagged(n)) => tracing::warn!("websocket subscriber skipped {n} events"),
                Err(RecvError::Closed) => return,
            },
        }
    }
}

async fn send_event(socket: &mut WebSocket, event: &lmpvc_core::events::Event) -> Result<(), axum::Error> {
    let text = serde_json::to_string(event).unwrap_or_default();
    socket.send(Message::Text(text.into())).await
}
