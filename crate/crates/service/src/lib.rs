//! HTTP+JSON service hosting live labeling sessions.
//!
//! Each session lives behind its own lock and appends to
//! `<data_dir>/sessions/<id>.jsonl`. On startup every log in that directory
//! is replayed, so a restarted service resumes exactly where it stopped.

use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use alkit_core::data::Dataset;
use alkit_core::session::{
    BatchView, HistoryView, Session, SessionConfig, SessionStatus, StopReason, SubmitOutcome, SubmitRequest,
};
use alkit_core::Error as CoreError;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::RwLock;

pub const API_PREFIX: &str = "/v1";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("data directory {path}: {source}")]
    DataDir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("recovering {path}: {source}")]
    Recovery {
        path: PathBuf,
        #[source]
        source: CoreError,
    },
}

/// Error body: `{"error": {"code": ..., "message": ...}}`.
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

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what} `{id}`"))
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let (status, code) = match &e {
            CoreError::SessionClosed => (StatusCode::CONFLICT, "session_stopped"),
            CoreError::Session(_) => (StatusCode::CONFLICT, "conflict"),
            CoreError::DuplicateSubmission(_) => (StatusCode::UNPROCESSABLE_ENTITY, "duplicate_item"),
            CoreError::Insufficient(_) => (StatusCode::UNPROCESSABLE_ENTITY, "incomplete_batch"),
            CoreError::UnknownInstance(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_instance"),
            CoreError::InvalidArgument(_) | CoreError::PoolExhausted { .. } | CoreError::MissingGroundTruth(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid")
            }
            CoreError::Io { .. } | CoreError::Serde(_) | CoreError::CorruptLog { .. } => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
            _ => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Inner {
    sessions_dir: PathBuf,
    datasets: BTreeMap<String, Arc<Dataset>>,
    sessions: RwLock<HashMap<String, Arc<RwLock<Session>>>>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

/// Outcome of opening a data directory.
#[derive(Debug, Default)]
pub struct Startup {
    pub recovered: Vec<String>,
    pub warnings: Vec<String>,
}

impl AppState {
    /// Opens `data_dir`, replaying every session log found there.
    pub fn open(data_dir: &Path, datasets: BTreeMap<String, Arc<Dataset>>) -> Result<(Self, Startup), ServiceError> {
        let sessions_dir = data_dir.join("sessions");
        let dir_err = |source| ServiceError::DataDir {
            path: sessions_dir.clone(),
            source,
        };
        std::fs::create_dir_all(&sessions_dir).map_err(dir_err)?;
        let mut logs: Vec<PathBuf> = std::fs::read_dir(&sessions_dir)
            .map_err(dir_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        logs.sort();

        let mut startup = Startup::default();
        let mut sessions = HashMap::new();
        for path in logs {
            let resolve = |name: &str| {
                datasets
                    .get(name)
                    .map(|d| d.as_ref().clone())
                    .ok_or_else(|| CoreError::Session(format!("dataset `{name}` is not loaded")))
            };
            let (session, report) = Session::recover(&path, resolve).map_err(|source| ServiceError::Recovery {
                path: path.clone(),
                source,
            })?;
            if let Some(w) = report.warning() {
                tracing::warn!(session = session.id(), "{w}");
                startup.warnings.push(format!("{}: {w}", session.id()));
            }
            tracing::info!(session = session.id(), events = report.events, "recovered session");
            startup.recovered.push(session.id().to_string());
            sessions.insert(session.id().to_string(), Arc::new(RwLock::new(session)));
        }
        let state = Self {
            inner: Arc::new(Inner {
                sessions_dir,
                datasets,
                sessions: RwLock::new(sessions),
            }),
        };
        Ok((state, startup))
    }

    pub fn dataset_names(&self) -> Vec<String> {
        self.inner.datasets.keys().cloned().collect()
    }

    async fn session(&self, id: &str) -> ApiResult<Arc<RwLock<Session>>> {
        self.inner
            .sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    /// State digest of a session, for recovery checks.
    pub async fn state_hash(&self, id: &str) -> Option<String> {
        let s = self.session(id).await.ok()?;
        let hash = s.read().await.state_hash();
        Some(hash)
    }
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/datasets", get(list_datasets))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_summary))
        .route("/sessions/{id}/batch", get(get_batch))
        .route("/sessions/{id}/labels", post(submit_labels))
        .route("/sessions/{id}/history", get(get_history))
        .route("/sessions/{id}/stop", post(stop_session));
    Router::new().nest(API_PREFIX, api).with_state(state)
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve<F>(listener: TcpListener, state: AppState, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub sessions: usize,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        sessions: state.inner.sessions.read().await.len(),
    })
}

async fn list_datasets(State(state): State<AppState>) -> Json<Vec<String>> {
    Json(state.dataset_names())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub dataset: String,
    #[serde(default)]
    pub config: SessionConfig,
    /// Optional client-chosen id: letters, digits, `-` and `_`.
    #[serde(default)]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub dataset: String,
    pub status: SessionStatus,
    pub round: usize,
    pub stop_reason: Option<StopReason>,
    pub batch: Option<BatchView>,
    /// Digest of the session state; equal across a restart.
    pub state_hash: String,
}

impl SessionSummary {
    fn of(s: &Session) -> Self {
        Self {
            session_id: s.id().to_string(),
            dataset: s.dataset_name().to_string(),
            status: s.status(),
            round: s.round(),
            stop_reason: s.stop_reason(),
            batch: s.pending_batch(),
            state_hash: s.state_hash(),
        }
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionSummary>)> {
    let Json(req) = body?;
    let dataset = state
        .inner
        .datasets
        .get(&req.dataset)
        .cloned()
        .ok_or_else(|| ApiError::not_found("dataset", &req.dataset))?;
    let id = match req.session_id {
        Some(id) if !valid_id(&id) => {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", format!("invalid session id `{id}`")))
        }
        Some(id) => id,
        None => uuid::Uuid::new_v4().simple().to_string(),
    };
    if state.inner.sessions.read().await.contains_key(&id) {
        return Err(ApiError::new(StatusCode::CONFLICT, "conflict", format!("session `{id}` already exists")));
    }
    let log = state.inner.sessions_dir.join(format!("{id}.jsonl"));
    let name = req.dataset.clone();
    let config = req.config;
    let sid = id.clone();
    let session = tokio::task::spawn_blocking(move || Session::create(sid, name, &dataset, config, Some(&log)))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let summary = SessionSummary::of(&session);
    let mut sessions = state.inner.sessions.write().await;
    if sessions.contains_key(&id) {
        return Err(ApiError::new(StatusCode::CONFLICT, "conflict", format!("session `{id}` already exists")));
    }
    sessions.insert(id.clone(), Arc::new(RwLock::new(session)));
    tracing::info!(session = %id, "session created");
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn session_summary(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionSummary>> {
    let s = state.session(&id).await?;
    let guard = s.read().await;
    Ok(Json(SessionSummary::of(&guard)))
}

async fn get_batch(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionSummary>> {
    session_summary(State(state), UrlPath(id)).await
}

async fn submit_labels(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<SubmitRequest>, JsonRejection>,
) -> ApiResult<Json<SubmitOutcome>> {
    let Json(req) = body?;
    let s = state.session(&id).await?;
    let mut guard = s.write_owned().await;
    let outcome = tokio::task::spawn_blocking(move || guard.submit_labels(req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    tracing::info!(session = %id, round = outcome.record.round, "round completed");
    Ok(Json(outcome))
}

async fn get_history(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<HistoryView>> {
    let s = state.session(&id).await?;
    let guard = s.read().await;
    Ok(Json(guard.history()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StopResponse {
    pub session_id: String,
    pub stop_reason: StopReason,
}

async fn stop_session(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<StopResponse>> {
    let s = state.session(&id).await?;
    let mut guard = s.write().await;
    let reason = guard.stop()?;
    tracing::info!(session = %id, ?reason, "session stopped");
    Ok(Json(StopResponse {
        session_id: id,
        stop_reason: reason,
    }))
}
