//! HTTP sessions that put a human behind the engine's oracle.
//!
//! The engine parks at every fresh oracle query; a client pulls the pending
//! query, answers it, and the session advances (through any splits or cached
//! labels) to the next query. Each session is guarded by its own mutex, so
//! submissions are applied one at a time and reads only ever see the state
//! between two steps.
//!
//! Endpoints:
//!
//! | method | path                        | body / result                          |
//! |--------|-----------------------------|----------------------------------------|
//! | GET    | `/health`                   | `{"status":"ok"}`                      |
//! | GET    | `/datasets`                 | datasets available to sessions         |
//! | GET    | `/sessions`                 | session ids with status                |
//! | POST   | `/sessions`                 | `{dataset, config?}` → state           |
//! | GET    | `/sessions/{id}/query`      | pending query or final status          |
//! | POST   | `/sessions/{id}/labels`     | `{query_id, class}` → submit result    |
//! | GET    | `/sessions/{id}/state`      | leaves, bound curve, history tail      |
//! | POST   | `/sessions/{id}/finalize`   | label CSV                              |

mod session;

use std::collections::BTreeMap;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gsal_core::engine::{EngineError, RunConfig};
use gsal_core::Dataset;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::Mutex;
use tower_http::cors::CorsLayer;

pub use session::{QueryPayload, QueryView, Session, SessionFile, SessionStatus, StateView, SubmitView};

/// Records included in a state snapshot's `history` unless asked otherwise.
pub const DEFAULT_HISTORY_TAIL: usize = 50;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::UnknownSession(_) | ApiError::UnknownDataset(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::InvalidConfig(_) => ApiError::BadRequest(e.to_string()),
            EngineError::StaleQuery { .. } | EngineError::NoPendingQuery => ApiError::Conflict(e.to_string()),
            EngineError::InvalidClass { .. } => ApiError::Invalid(e.to_string()),
            _ => ApiError::Internal(e.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
}

/// Shared server state: read-only datasets plus the live sessions.
#[derive(Debug)]
pub struct AppState {
    datasets: BTreeMap<String, Arc<Dataset>>,
    default_config: RunConfig,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Session>>>>,
    next_session: AtomicU64,
    checkpoint_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(datasets: BTreeMap<String, Arc<Dataset>>, default_config: RunConfig) -> Self {
        Self {
            datasets,
            default_config,
            sessions: RwLock::new(BTreeMap::new()),
            next_session: AtomicU64::new(1),
            checkpoint_dir: None,
        }
    }

    /// Persist every session to `dir` after each change and reload the
    /// sessions already saved there.
    pub fn with_checkpoints(mut self, dir: impl Into<PathBuf>) -> Result<Self, StartupError> {
        let dir = dir.into();
        let fail = |path: &Path, message: String| StartupError::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        std::fs::create_dir_all(&dir).map_err(|e| fail(&dir, e.to_string()))?;
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| fail(&dir, e.to_string()))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
            .collect();
        entries.sort();
        let mut sessions = BTreeMap::new();
        let mut max_id = 0;
        for path in entries {
            let text = std::fs::read_to_string(&path).map_err(|e| fail(&path, e.to_string()))?;
            let file: SessionFile = serde_json::from_str(&text).map_err(|e| fail(&path, e.to_string()))?;
            let dataset = self
                .datasets
                .get(&file.dataset)
                .cloned()
                .ok_or_else(|| fail(&path, format!("dataset {:?} is not loaded", file.dataset)))?;
            if let Some(n) = file.session_id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                max_id = max_id.max(n);
            }
            let session = Session::restore(file, dataset).map_err(|e| fail(&path, e.to_string()))?;
            sessions.insert(session.id().to_string(), Arc::new(Mutex::new(session)));
        }
        self.sessions = RwLock::new(sessions);
        self.next_session = AtomicU64::new(max_id + 1);
        self.checkpoint_dir = Some(dir);
        Ok(self)
    }

    pub fn default_config(&self) -> &RunConfig {
        &self.default_config
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().expect("session map poisoned").keys().cloned().collect()
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }

    fn save(&self, session: &Session) -> Result<(), ApiError> {
        let Some(dir) = &self.checkpoint_dir else {
            return Ok(());
        };
        let path = dir.join(format!("{}.json", session.id()));
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string(&session.to_file()).map_err(|e| ApiError::Internal(e.to_string()))?;
        std::fs::write(&tmp, text)
            .and_then(|_| std::fs::rename(&tmp, &path))
            .map_err(|e| ApiError::Internal(format!("{}: {e}", path.display())))
    }
}

/// Overlay `patch` onto `base`, recursing into nested objects.
fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(base), Value::Object(patch)) => {
            for (key, value) in patch {
                merge_json(base.entry(key).or_insert(Value::Null), value);
            }
        }
        (slot, value) => *slot = value,
    }
}

/// Server defaults with the fields of `overrides` replaced.
pub fn resolve_config(defaults: &RunConfig, overrides: Option<Value>) -> Result<RunConfig, ApiError> {
    let mut merged = serde_json::to_value(defaults).map_err(|e| ApiError::Internal(e.to_string()))?;
    if let Some(patch) = overrides {
        if !patch.is_object() {
            return Err(ApiError::BadRequest("config must be a JSON object".into()));
        }
        merge_json(&mut merged, patch);
    }
    let config: RunConfig =
        serde_json::from_value(merged).map_err(|e| ApiError::BadRequest(format!("invalid config: {e}")))?;
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub dataset: String,
    #[serde(default)]
    pub config: Option<Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitLabel {
    pub query_id: u64,
    pub class: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub size: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub render_hint: Option<(usize, usize)>,
    pub has_truth: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub dataset: String,
    pub status: SessionStatus,
}

#[derive(Debug, Deserialize)]
struct HistoryParams {
    history: Option<usize>,
}

async fn health() -> Json<Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn list_datasets(State(state): State<Arc<AppState>>) -> Json<Vec<DatasetInfo>> {
    let infos = state
        .datasets
        .iter()
        .map(|(name, ds)| DatasetInfo {
            name: name.clone(),
            size: ds.len(),
            dim: ds.dim(),
            num_classes: ds.num_classes,
            render_hint: ds.render_hint,
            has_truth: ds.truth.is_some(),
        })
        .collect();
    Json(infos)
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> Json<Vec<SessionInfo>> {
    let sessions: Vec<_> = state.sessions.read().expect("session map poisoned").values().cloned().collect();
    let mut infos = Vec::with_capacity(sessions.len());
    for session in sessions {
        let s = session.lock().await;
        infos.push(SessionInfo {
            session_id: s.id().to_string(),
            dataset: s.dataset_name().to_string(),
            status: s.status(),
        });
    }
    Json(infos)
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<StateView>), ApiError> {
    let Json(request) = body?;
    let dataset = state
        .datasets
        .get(&request.dataset)
        .cloned()
        .ok_or_else(|| ApiError::UnknownDataset(request.dataset.clone()))?;
    let config = resolve_config(&state.default_config, request.config)?;
    let id = format!("s{}", state.next_session.fetch_add(1, Ordering::SeqCst));
    let session = Session::start(id.clone(), request.dataset, dataset, config)?;
    state.save(&session)?;
    let view = session.state_view(DEFAULT_HISTORY_TAIL);
    state
        .sessions
        .write()
        .expect("session map poisoned")
        .insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_query(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<QueryView>, ApiError> {
    let session = state.session(&id)?;
    let view = session.lock().await.query_view();
    Ok(Json(view))
}

async fn submit_label(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<SubmitLabel>, JsonRejection>,
) -> Result<Json<SubmitView>, ApiError> {
    let Json(request) = body?;
    let session = state.session(&id)?;
    let mut session = session.lock().await;
    let view = session.submit(request.query_id, request.class)?;
    state.save(&session)?;
    Ok(Json(view))
}

async fn get_state(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(params): Query<HistoryParams>,
) -> Result<Json<StateView>, ApiError> {
    let session = state.session(&id)?;
    let view = session
        .lock()
        .await
        .state_view(params.history.unwrap_or(DEFAULT_HISTORY_TAIL));
    Ok(Json(view))
}

async fn finalize(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let mut session = session.lock().await;
    let csv = session.finalize().to_csv_string();
    state.save(&session)?;
    let disposition = format!("attachment; filename=\"{}-labels.csv\"", session.id());
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv".to_string()),
            (header::CONTENT_DISPOSITION, disposition),
        ],
        csv,
    )
        .into_response())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/datasets", get(list_datasets))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}/query", get(get_query))
        .route("/sessions/{id}/labels", post(submit_label))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/finalize", post(finalize))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, StartupError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| StartupError::Bind { addr, source })
}

/// Serve until the listener fails.
pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> io::Result<()> {
    axum::serve(listener, router(state)).await
}
