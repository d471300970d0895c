//! HTTP and server-sent-events front end for interactive sessions.
//!
//! Each session's engine runs on its own thread with a port that parks
//! until the matching POST arrives. Handlers and engine share a small
//! per-session view guarded by a mutex; every change to that view is also
//! broadcast to event-stream subscribers.

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{mpsc, Arc, Mutex, MutexGuard, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use daqsynth_core::fixture::SessionPlan;
use daqsynth_core::emulation::EmulationMode;
use daqsynth_core::flow::{
    Artifact, ArtifactKind, ClientPort, Engine, EngineOptions, EventSink, FeedbackVerdict, PortError, SessionEvent,
    SessionSpec, SessionState, SessionStatus, SinkError, Stage,
};
use daqsynth_core::llm::{ChatBackend, ModelConfig, ScriptEntry, ScriptedBackend};
use daqsynth_core::metrics::collect_metrics;
use daqsynth_core::prompts::PromptCatalog;
use daqsynth_core::testbench::TestbenchId;
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast;

use crate::artifacts::{architecture_dot, write_artifacts};
use crate::http::{HttpBackend, RetryPolicy};
use crate::render::Renderer;
use crate::store::{FileStore, JsonlSink, StoreError};

const EVENT_BUFFER: usize = 256;

#[derive(Debug, Clone)]
pub enum ServiceBackend {
    /// Each session gets its own backend over these entries.
    Scripted(Vec<ScriptEntry>),
    Live,
}

impl Default for ServiceBackend {
    /// The angular position fixture, so a dev server never needs a key.
    fn default() -> Self {
        ServiceBackend::Scripted(SessionPlan::for_testbench(TestbenchId::AngularPosition).script(EmulationMode::Direct))
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub store: FileStore,
    /// Final artifacts go to `<artifacts>/<id>/`.
    pub artifacts: PathBuf,
    pub backend: ServiceBackend,
    pub designer: ModelConfig,
    pub renderer: Option<Renderer>,
}

impl ServiceConfig {
    pub fn new(store: FileStore, artifacts: impl Into<PathBuf>) -> Self {
        Self {
            store,
            artifacts: artifacts.into(),
            backend: ServiceBackend::default(),
            designer: ModelConfig::designer(),
            renderer: None,
        }
    }
}

enum Input {
    Answers(Vec<String>),
    Verdict(FeedbackVerdict),
}

#[derive(Debug, Clone)]
enum Waiting {
    Nothing,
    Answers {
        stage: Stage,
        block: Option<String>,
        questions: Vec<String>,
    },
    Verdict(Artifact),
}

/// One message on the event stream.
#[derive(Debug, Clone)]
struct Notice {
    name: &'static str,
    data: Value,
}

impl Notice {
    fn new(name: &'static str, data: Value) -> Self {
        Self { name, data }
    }

    fn is_terminal(&self) -> bool {
        matches!(self.name, "done" | "failed")
    }

    fn to_event(&self) -> Event {
        Event::default().event(self.name).data(self.data.to_string())
    }
}

struct View {
    stage: Stage,
    status: SessionStatus,
    waiting: Waiting,
    failure: Option<String>,
    diagram: Option<String>,
    details: BTreeMap<String, String>,
    summary: Option<String>,
    inputs: Option<mpsc::Sender<Input>>,
}

struct Session {
    id: String,
    view: Mutex<View>,
    notices: broadcast::Sender<Notice>,
}

impl Session {
    fn lock(&self) -> MutexGuard<'_, View> {
        self.view.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Sends while the view lock is held so subscribers see changes in the
    /// same order as the view.
    fn notify(&self, _view: &MutexGuard<'_, View>, notice: Notice) {
        let _ = self.notices.send(notice);
    }

    fn pending_ref(&self) -> String {
        format!("/api/sessions/{}/pending", self.id)
    }

    fn snapshot(&self, view: &View) -> Vec<Notice> {
        let mut out = vec![Notice::new("stage_changed", json!({ "stage": view.stage }))];
        match &view.waiting {
            Waiting::Nothing => {}
            Waiting::Answers { stage, block, questions } => out.push(Notice::new(
                "waiting_for_answers",
                json!({ "stage": stage, "block": block, "questions": questions }),
            )),
            Waiting::Verdict(artifact) => out.push(self.verdict_notice(artifact)),
        }
        match view.status {
            SessionStatus::Done => out.push(Notice::new("done", json!({}))),
            SessionStatus::Failed => out.push(Notice::new(
                "failed",
                json!({ "reason": view.failure.clone().unwrap_or_default() }),
            )),
            SessionStatus::Running => {}
        }
        out
    }

    fn verdict_notice(&self, artifact: &Artifact) -> Notice {
        Notice::new(
            "waiting_for_verdict",
            json!({
                "kind": artifact.kind(),
                "block": artifact.block(),
                "content_ref": self.pending_ref(),
                "content": artifact_content(artifact),
            }),
        )
    }
}

fn artifact_content(artifact: &Artifact) -> String {
    match artifact {
        Artifact::Diagram { dot, .. } => dot.as_str().to_owned(),
        Artifact::Detail { text, .. } | Artifact::Summary { text } => text.clone(),
    }
}

/// The engine's view of the browser: publishes what it waits for, then
/// parks until a handler delivers the input.
struct ChannelPort {
    session: Arc<Session>,
    inputs: mpsc::Receiver<Input>,
}

impl ClientPort for ChannelPort {
    fn answer_questions(
        &mut self,
        stage: Stage,
        block: Option<&str>,
        questions: &[String],
    ) -> Result<Vec<String>, PortError> {
        {
            let mut view = self.session.lock();
            view.waiting = Waiting::Answers {
                stage,
                block: block.map(str::to_owned),
                questions: questions.to_vec(),
            };
            self.session.notify(
                &view,
                Notice::new(
                    "waiting_for_answers",
                    json!({ "stage": stage, "block": block, "questions": questions }),
                ),
            );
        }
        match self.inputs.recv() {
            Ok(Input::Answers(answers)) => Ok(answers),
            Ok(Input::Verdict(_)) => Err(PortError::Other(String::from("verdict delivered while waiting for answers"))),
            Err(_) => Err(PortError::Closed),
        }
    }

    fn give_verdict(&mut self, artifact: &Artifact) -> Result<FeedbackVerdict, PortError> {
        {
            let mut view = self.session.lock();
            view.waiting = Waiting::Verdict(artifact.clone());
            let notice = self.session.verdict_notice(artifact);
            self.session.notify(&view, notice);
        }
        match self.inputs.recv() {
            Ok(Input::Verdict(v)) => Ok(v),
            Ok(Input::Answers(_)) => Err(PortError::Other(String::from("answers delivered while waiting for a verdict"))),
            Err(_) => Err(PortError::Closed),
        }
    }
}

/// Persists every event and mirrors the ones the UI cares about.
struct ServiceSink {
    file: JsonlSink,
    session: Arc<Session>,
}

impl EventSink for ServiceSink {
    fn record(&mut self, event: &SessionEvent) -> Result<(), SinkError> {
        self.file.record(event)?;
        let s = &self.session;
        let id = &s.id;
        let mut view = s.lock();
        match event {
            SessionEvent::StageAdvanced { stage } => {
                view.stage = *stage;
                s.notify(&view, Notice::new("stage_changed", json!({ "stage": stage })));
            }
            SessionEvent::ArchitectureAccepted { graph, .. } => {
                view.diagram = Some(daqsynth_core::diagram::to_dot(graph).into_string());
                s.notify(
                    &view,
                    Notice::new(
                        "artifact",
                        json!({ "kind": ArtifactKind::Diagram, "path": format!("/api/sessions/{id}/diagram.dot") }),
                    ),
                );
            }
            SessionEvent::DetailAccepted { block, text } => {
                view.details.insert(block.clone(), text.clone());
                s.notify(
                    &view,
                    Notice::new(
                        "artifact",
                        json!({ "kind": ArtifactKind::Detail, "block": block, "path": format!("/api/sessions/{id}/blocks/{block}") }),
                    ),
                );
            }
            SessionEvent::SummaryProduced { text } => view.summary = Some(text.clone()),
            SessionEvent::SummaryAccepted => s.notify(
                &view,
                Notice::new(
                    "artifact",
                    json!({ "kind": ArtifactKind::Summary, "path": format!("/api/sessions/{id}/summary") }),
                ),
            ),
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct Service {
    config: Arc<ServiceConfig>,
    sessions: Arc<RwLock<HashMap<String, Arc<Session>>>>,
}

impl Service {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            config: Arc::new(config),
            sessions: Arc::default(),
        }
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/api/sessions", post(create_session))
            .route("/api/sessions/{id}", get(session_state))
            .route("/api/sessions/{id}/events", get(session_events))
            .route("/api/sessions/{id}/answers", post(post_answers))
            .route("/api/sessions/{id}/feedback", post(post_feedback))
            .route("/api/sessions/{id}/pending", get(pending))
            .route("/api/sessions/{id}/diagram.dot", get(diagram_dot))
            .route("/api/sessions/{id}/diagram.svg", get(diagram_svg))
            .route("/api/sessions/{id}/blocks/{block}", get(block_detail))
            .route("/api/sessions/{id}/summary", get(summary))
            .with_state(self.clone())
    }

    fn session(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    /// Starts a session thread and returns its id.
    fn spawn(&self, description: String) -> std::io::Result<String> {
        let id = uuid::Uuid::new_v4().to_string();
        let sink_file = self.config.store.create(&id)?;
        let (tx, rx) = mpsc::channel();
        let (notices, _) = broadcast::channel(EVENT_BUFFER);
        let session = Arc::new(Session {
            id: id.clone(),
            view: Mutex::new(View {
                stage: Stage::Architectural,
                status: SessionStatus::Running,
                waiting: Waiting::Nothing,
                failure: None,
                diagram: None,
                details: BTreeMap::new(),
                summary: None,
                inputs: Some(tx),
            }),
            notices,
        });
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id.clone(), session.clone());

        let config = self.config.clone();
        let spec = SessionSpec {
            id: id.clone(),
            description,
            designer: config.designer.clone(),
            emulator: None,
            origin: None,
        };
        std::thread::Builder::new()
            .name(format!("session-{id}"))
            .spawn(move || drive(config, spec, session, rx, sink_file))?;
        Ok(id)
    }

    fn stored_state(&self, id: &str) -> Result<SessionState, ApiError> {
        self.config.store.load_session(id).map_err(|e| match e {
            StoreError::NotFound(_) => ApiError::not_found(id),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "store_error", other.to_string()),
        })
    }
}

fn drive(
    config: Arc<ServiceConfig>,
    spec: SessionSpec,
    session: Arc<Session>,
    inputs: mpsc::Receiver<Input>,
    file: JsonlSink,
) {
    let catalog = PromptCatalog::builtin();
    let port = ChannelPort {
        session: session.clone(),
        inputs,
    };
    let sink = ServiceSink {
        file,
        session: session.clone(),
    };
    let backend: Result<Box<dyn ChatBackend>, String> = match &config.backend {
        ServiceBackend::Scripted(entries) => Ok(Box::new(ScriptedBackend::new(entries.clone()))),
        ServiceBackend::Live => HttpBackend::new(&config.designer, RetryPolicy::default())
            .map(|b| Box::new(b) as Box<dyn ChatBackend>)
            .map_err(|e| e.to_string()),
    };
    let outcome = backend.and_then(|backend| {
        let mut engine = Engine::start(&catalog, spec, backend, port, sink, EngineOptions::interactive())
            .map_err(|e| e.to_string())?;
        let result = engine.run();
        let (state, _, _, _) = engine.into_parts();
        Ok((state, result.err().map(|e| e.to_string())))
    });

    let (state, error) = match outcome {
        Ok((state, error)) => (Some(state), error),
        Err(e) => (None, Some(e)),
    };
    if let Some(state) = &state {
        if let Ok(events) = config.store.load_events(&session.id) {
            let dir = config.artifacts.join(crate::store::sanitize(&session.id));
            let _ = write_artifacts(&dir, state, &collect_metrics(&events), config.renderer.as_ref());
        }
    }

    let mut view = session.lock();
    view.waiting = Waiting::Nothing;
    view.inputs = None;
    match state.as_ref().map(|s| s.status) {
        Some(SessionStatus::Done) if error.is_none() => {
            view.status = SessionStatus::Done;
            view.stage = Stage::Done;
            session.notify(&view, Notice::new("done", json!({})));
        }
        _ => {
            let reason = error
                .or_else(|| state.as_ref().and_then(|s| s.failure.clone()))
                .unwrap_or_else(|| String::from("session ended"));
            view.status = SessionStatus::Failed;
            view.failure = Some(reason.clone());
            session.notify(&view, Notice::new("failed", json!({ "reason": reason })));
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "not_waiting", message)
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("malformed_body", e.to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    description: String,
    #[serde(default)]
    mode: Option<String>,
}

async fn create_session(State(svc): State<Service>, body: Bytes) -> Result<Response, ApiError> {
    let body: CreateBody = parse_body(&body)?;
    if let Some(mode) = body.mode.as_deref() {
        if mode != "interactive" {
            return Err(ApiError::bad_request(
                "unsupported_mode",
                format!("mode {mode:?} is not served; use \"interactive\""),
            ));
        }
    }
    if body.description.trim().is_empty() {
        return Err(ApiError::bad_request("empty_description", "description must not be empty"));
    }
    let id = svc
        .spawn(body.description)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "store_error", e.to_string()))?;
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))).into_response())
}

async fn session_state(State(svc): State<Service>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let Some(session) = svc.session(&id) else {
        let state = svc.stored_state(&id)?;
        return Ok(Json(json!({
            "id": id,
            "stage": state.stage,
            "status": state.status,
            "waiting": "none",
        })));
    };
    let view = session.lock();
    let mut out = json!({
        "id": id,
        "stage": view.stage,
        "status": view.status,
        "waiting": "none",
    });
    match &view.waiting {
        Waiting::Nothing => {}
        Waiting::Answers { questions, block, .. } => {
            out["waiting"] = json!("answers");
            out["questions"] = json!(questions);
            out["block"] = json!(block);
        }
        Waiting::Verdict(artifact) => {
            out["waiting"] = json!("verdict");
            out["artifact_kind"] = json!(artifact.kind());
            out["block"] = json!(artifact.block());
        }
    }
    if let Some(reason) = &view.failure {
        out["failure"] = json!(reason);
    }
    Ok(Json(out))
}

async fn session_events(
    State(svc): State<Service>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let session = svc.session(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let (snapshot, rx) = {
        let view = session.lock();
        (session.snapshot(&view), session.notices.subscribe())
    };
    let finished = snapshot.last().is_some_and(Notice::is_terminal);
    let tail = stream::unfold((rx, finished), |(mut rx, finished)| async move {
        if finished {
            return None;
        }
        loop {
            match rx.recv().await {
                Ok(n) => {
                    let end = n.is_terminal();
                    return Some((n, (rx, end)));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    let events = stream::iter(snapshot).chain(tail).map(|n| Ok(n.to_event()));
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswersBody {
    answers: Vec<String>,
}

async fn post_answers(State(svc): State<Service>, Path(id): Path<String>, body: Bytes) -> Result<StatusCode, ApiError> {
    let session = svc.session(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let body: AnswersBody = parse_body(&body)?;
    let mut view = session.lock();
    let Waiting::Answers { questions, .. } = &view.waiting else {
        return Err(ApiError::conflict("session is not waiting for answers"));
    };
    if body.answers.len() != questions.len() {
        return Err(ApiError::bad_request(
            "answer_count",
            format!("expected {} answers, got {}", questions.len(), body.answers.len()),
        ));
    }
    deliver(&mut view, Input::Answers(body.answers))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackBody {
    kind: String,
    #[serde(default)]
    text: Option<String>,
}

async fn post_feedback(State(svc): State<Service>, Path(id): Path<String>, body: Bytes) -> Result<StatusCode, ApiError> {
    let session = svc.session(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let body: FeedbackBody = parse_body(&body)?;
    let verdict = match body.kind.as_str() {
        "accept" => FeedbackVerdict::Accept,
        "revise" => FeedbackVerdict::revise(body.text.unwrap_or_default())
            .map_err(|_| ApiError::bad_request("empty_feedback", "revise needs nonempty text"))?,
        other => {
            return Err(ApiError::bad_request(
                "malformed_body",
                format!("kind must be \"accept\" or \"revise\", got {other:?}"),
            ))
        }
    };
    let mut view = session.lock();
    if !matches!(view.waiting, Waiting::Verdict(_)) {
        return Err(ApiError::conflict("session is not waiting for a verdict"));
    }
    deliver(&mut view, Input::Verdict(verdict))
}

fn deliver(view: &mut View, input: Input) -> Result<StatusCode, ApiError> {
    let sent = view.inputs.as_ref().is_some_and(|tx| tx.send(input).is_ok());
    if !sent {
        return Err(ApiError::conflict("session is no longer accepting input"));
    }
    view.waiting = Waiting::Nothing;
    Ok(StatusCode::NO_CONTENT)
}

async fn pending(State(svc): State<Service>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let session = svc.session(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let view = session.lock();
    match &view.waiting {
        Waiting::Verdict(artifact) => Ok(Json(json!({
            "kind": artifact.kind(),
            "block": artifact.block(),
            "content": artifact_content(artifact),
        }))),
        _ => Err(ApiError::new(StatusCode::NOT_FOUND, "nothing_pending", "no artifact awaits a verdict")),
    }
}

/// The diagram under review if there is one, else the accepted
/// architecture.
fn current_dot(svc: &Service, id: &str) -> Result<String, ApiError> {
    let missing = || ApiError::new(StatusCode::NOT_FOUND, "no_diagram", "no diagram yet");
    match svc.session(id) {
        Some(session) => {
            let view = session.lock();
            match &view.waiting {
                Waiting::Verdict(Artifact::Diagram { dot, .. }) => Ok(dot.as_str().to_owned()),
                _ => view.diagram.clone().ok_or_else(missing),
            }
        }
        None => architecture_dot(&svc.stored_state(id)?).ok_or_else(missing),
    }
}

fn text(content_type: &'static str, body: String) -> Response {
    ([(header::CONTENT_TYPE, content_type)], body).into_response()
}

async fn diagram_dot(State(svc): State<Service>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(text("text/vnd.graphviz; charset=utf-8", current_dot(&svc, &id)?))
}

async fn diagram_svg(State(svc): State<Service>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let dot = current_dot(&svc, &id)?;
    let unavailable = || ApiError::new(StatusCode::NOT_FOUND, "renderer_unavailable", "no diagram renderer available");
    let renderer = svc.config.renderer.clone().ok_or_else(unavailable)?;
    let svg = tokio::task::spawn_blocking(move || renderer.svg(&dot))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "render_failed", e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "render_failed", e.to_string()))?
        .ok_or_else(unavailable)?;
    Ok(text("image/svg+xml", svg))
}

async fn block_detail(
    State(svc): State<Service>,
    Path((id, block)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let missing = || ApiError::new(StatusCode::NOT_FOUND, "no_detail", format!("no accepted detail for {block}"));
    let detail = match svc.session(&id) {
        Some(session) => session.lock().details.get(&block).cloned(),
        None => svc.stored_state(&id)?.details.get(&block).cloned(),
    };
    Ok(text("text/markdown; charset=utf-8", detail.ok_or_else(missing)?))
}

async fn summary(State(svc): State<Service>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let missing = || ApiError::new(StatusCode::NOT_FOUND, "no_summary", "summary not produced yet");
    let summary = match svc.session(&id) {
        Some(session) => session.lock().summary.clone(),
        None => svc.stored_state(&id)?.summary,
    };
    Ok(text("text/markdown; charset=utf-8", summary.ok_or_else(missing)?))
}

/// Serves until the process receives Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, service: Service) -> std::io::Result<()> {
    axum::serve(listener, service.router())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
