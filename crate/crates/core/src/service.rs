//! JSON-over-HTTP session service.
//!
//! Each session sits behind its own FIFO async mutex, so concurrent
//! requests for one session run one after another in arrival order while
//! different sessions proceed independently. Model work runs on the
//! blocking pool. The step endpoint is pull-based: clients poll it.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::Error;
use crate::inference::{Engine, Event, GenConfig, Session, Source, Status};
use crate::toyworld::{decode_png, encode_png};

/// Environment variable holding the default bind address.
pub const BIND_ENV: &str = "TV2TV_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
/// Upper bound on `n_events` per step request.
pub const MAX_EVENTS_PER_STEP: usize = 256;

#[derive(Debug, Clone, Serialize)]
pub struct SessionRecord {
    pub id: String,
    pub created_at: u64,
    pub config: GenConfig,
    pub status: Status,
    pub element_count: usize,
}

struct Slot {
    id: String,
    created_at: u64,
    session: Arc<tokio::sync::Mutex<Session>>,
}

impl Slot {
    fn record(&self, s: &Session) -> SessionRecord {
        SessionRecord {
            id: self.id.clone(),
            created_at: self.created_at,
            config: s.cfg,
            status: s.status(),
            element_count: s.element_count(),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    engine: Engine,
    sessions: Arc<Mutex<HashMap<String, Arc<Slot>>>>,
    next_id: Arc<AtomicU64>,
}

impl AppState {
    pub fn new(engine: Engine) -> AppState {
        AppState {
            engine,
            sessions: Arc::default(),
            next_id: Arc::new(AtomicU64::new(1)),
        }
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id:?}")))
    }
}

/// An error response: `{"error": {"code", "message"}}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> ApiError {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn invalid(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> ApiError {
        match e {
            Error::Session(_) => ApiError::new(StatusCode::CONFLICT, "session_done", e.to_string()),
            Error::Grammar { .. } | Error::Tokenize { .. } | Error::Config(_) | Error::Image(_) | Error::Shape(_) => ApiError::invalid(e.to_string()),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": {"code": self.code, "message": self.message}}))).into_response()
    }
}

fn parse_body<T: serde::de::DeserializeOwned + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("request body: {e}")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    #[serde(default)]
    prompt: String,
    cond_frame: Option<String>,
    config: Option<GenConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRequest {
    n_events: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct InterveneRequest {
    #[serde(default)]
    text: String,
}

/// Wire form of an [`Event`].
pub fn event_json(ev: &Event, now_s: f64) -> Value {
    let source = |s: &Source| serde_json::to_value(s).expect("source serializes");
    match ev {
        Event::Text {
            token_ids,
            text,
            timestamp_s,
            source: src,
        } => json!({
            "type": "text", "text": text, "token_ids": token_ids, "timestamp_s": timestamp_s, "source": source(src),
        }),
        Event::Chunk {
            chunk_index,
            timestamp_s,
            frames,
            source: src,
            ..
        } => json!({
            "type": "chunk",
            "chunk_index": chunk_index,
            "timestamp_s": timestamp_s,
            "source": source(src),
            "frames_png_base64": frames.iter().map(|f| B64.encode(encode_png(f))).collect::<Vec<_>>(),
        }),
        Event::Done { reason } => json!({
            "type": "done",
            "reason": serde_json::to_value(reason).expect("reason serializes"),
            "timestamp_s": now_s,
        }),
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

async fn create(State(app): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateRequest = parse_body(&body)?;
    let frame = match &req.cond_frame {
        Some(b) => {
            let bytes = B64.decode(b.trim()).map_err(|e| ApiError::invalid(format!("cond_frame: {e}")))?;
            let f = decode_png(&bytes)?;
            if (f.height, f.width) != (32, 32) {
                return Err(ApiError::invalid(format!("cond_frame must be 32×32, got {}×{}", f.height, f.width)));
            }
            Some(f)
        }
        None => None,
    };
    let cfg = req.config.unwrap_or_default();
    let engine = app.engine.clone();
    let prompt = req.prompt;
    let session = tokio::task::spawn_blocking(move || engine.start(&prompt, frame.as_ref(), cfg))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let id = format!("s{:06}", app.next_id.fetch_add(1, Ordering::Relaxed));
    let slot = Arc::new(Slot {
        id: id.clone(),
        created_at: unix_now(),
        session: Arc::new(tokio::sync::Mutex::new(session)),
    });
    let record = slot.record(&*slot.session.lock().await);
    app.sessions.lock().expect("session map poisoned").insert(id, slot);
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn get_record(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionRecord>, ApiError> {
    let slot = app.slot(&id)?;
    let s = slot.session.lock().await;
    Ok(Json(slot.record(&s)))
}

async fn step(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: StepRequest = parse_body(&body)?;
    let n = req.n_events.unwrap_or(1);
    if n == 0 || n > MAX_EVENTS_PER_STEP {
        return Err(ApiError::invalid(format!("n_events must be in 1..={MAX_EVENTS_PER_STEP}")));
    }
    let slot = app.slot(&id)?;
    let guard = slot.session.clone().lock_owned().await;
    let out = tokio::task::spawn_blocking(move || {
        let mut s = guard;
        if s.status() == Status::Done {
            return Err(ApiError::new(StatusCode::CONFLICT, "session_done", "session is done"));
        }
        let mut events = Vec::new();
        while events.len() < n && s.status() != Status::Done {
            let ev = s.step()?;
            let now = s.transcript().last().map_or(0.0, |e| e.timestamp_s);
            events.push(event_json(&ev, now));
        }
        Ok(json!({
            "events": events,
            "status": s.status(),
            "element_count": s.element_count(),
        }))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(out))
}

async fn intervene(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: InterveneRequest = parse_body(&body)?;
    if req.text.trim().is_empty() {
        return Err(ApiError::invalid("intervention text is empty"));
    }
    let slot = app.slot(&id)?;
    let mut s = slot.session.lock().await;
    let at = s.intervene(&req.text)?;
    Ok(Json(json!({"accepted": true, "applied_at_s": at})))
}

async fn transcript(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let slot = app.slot(&id)?;
    let s = slot.session.lock().await;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], s.transcript_jsonl()).into_response())
}

async fn delete(State(app): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    app.sessions
        .lock()
        .expect("session map poisoned")
        .remove(&id)
        .map(|_| StatusCode::NO_CONTENT)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id:?}")))
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(engine: Engine) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/:id", get(get_record).delete(delete))
        .route("/sessions/:id/step", post(step))
        .route("/sessions/:id/intervene", post(intervene))
        .route("/sessions/:id/transcript", get(transcript))
        .fallback(fallback)
        .with_state(AppState::new(engine))
}

/// Serve until the process is stopped.
pub async fn serve(engine: Engine, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "serving");
    axum::serve(listener, router(engine)).await
}
