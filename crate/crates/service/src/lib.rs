//! JSON-over-HTTP front end for datasets, interactive sessions and tree
//! building. State lives in memory; transcripts can optionally be appended
//! to disk as JSON lines.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use groupquery::session::{OutcomeDoc, StatusDoc, SuggestionDoc};
use groupquery::tree::{evaluate_by_formula, export_tree, TreeDocument, TreeEvaluation};
use groupquery::{
    build, Algorithm, BuildConfig, BuildError, Dataset, NoiseBlock, NoiseSpec, Objective, ProblemDocument, Session,
    SessionConfig, SessionError, Status, StrategyKind, TieBreak, Transcript,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// How many of the most probable outcomes a session view lists.
pub const TOP_K: usize = 5;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    /// The answer left nothing consistent; the session is now failed.
    #[error("{reason}")]
    Inconsistent { reason: String, session: Box<SessionView> },
    #[error("{0}")]
    Internal(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    session: Option<&'a SessionView>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let msg = self.to_string();
        let (code, session) = match &self {
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, None),
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, None),
            ApiError::Conflict(_) => (StatusCode::CONFLICT, None),
            ApiError::Inconsistent { session, .. } => (StatusCode::UNPROCESSABLE_ENTITY, Some(session.as_ref())),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, None),
        };
        (code, Json(ErrorBody { error: &msg, session })).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Finished(_) | SessionError::OutsideSuggestion { .. } => ApiError::Conflict(e.to_string()),
            SessionError::NoInformativeQuery(_) => ApiError::Conflict(e.to_string()),
            _ => ApiError::BadRequest(e.to_string()),
        }
    }
}

/// Parses a JSON body, mapping every failure (syntax or shape) to 400.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed request body: {e}")))
}

// ---------------------------------------------------------------------------
// Store

struct SessionEntry {
    dataset: String,
    session: Session,
}

#[derive(Default)]
struct Store {
    datasets: RwLock<BTreeMap<String, Arc<Dataset>>>,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<SessionEntry>>>>,
    next_dataset: AtomicU64,
    next_session: AtomicU64,
    transcript_dir: Option<PathBuf>,
}

/// Shared server state; cheap to clone.
#[derive(Clone, Default)]
pub struct AppState {
    store: Arc<Store>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends every session's transcript to `<dir>/<session id>.jsonl`
    /// after each change; the last line is always the current transcript.
    pub fn with_transcript_dir(dir: impl Into<PathBuf>) -> Self {
        AppState { store: Arc::new(Store { transcript_dir: Some(dir.into()), ..Store::default() }) }
    }

    /// Registers a dataset directly (used by the CLI to preload problems).
    pub fn add_dataset(&self, ds: Dataset) -> String {
        let id = format!("d{}", self.store.next_dataset.fetch_add(1, Ordering::Relaxed) + 1);
        self.store.datasets.write().unwrap().insert(id.clone(), Arc::new(ds));
        id
    }

    fn dataset(&self, id: &str) -> Result<Arc<Dataset>, ApiError> {
        self.store.datasets.read().unwrap().get(id).cloned().ok_or_else(|| ApiError::NotFound(format!("no dataset `{id}`")))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<SessionEntry>>, ApiError> {
        self.store.sessions.read().unwrap().get(id).cloned().ok_or_else(|| ApiError::NotFound(format!("no session `{id}`")))
    }

    fn persist(&self, id: &str, session: &Session) -> Result<(), ApiError> {
        let Some(dir) = &self.store.transcript_dir else { return Ok(()) };
        let line = serde_json::to_string(&session.transcript()).map_err(|e| ApiError::Internal(e.to_string()))?;
        let write = || -> std::io::Result<()> {
            std::fs::create_dir_all(dir)?;
            let mut f = OpenOptions::new().create(true).append(true).open(dir.join(format!("{id}.jsonl")))?;
            writeln!(f, "{line}")
        };
        write().map_err(|e| ApiError::Internal(format!("cannot persist transcript: {e}")))
    }
}

// ---------------------------------------------------------------------------
// Wire types

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub id: String,
    pub objects: usize,
    pub queries: usize,
    pub object_groups: usize,
    pub query_groups: usize,
    pub noise: bool,
}

impl DatasetSummary {
    fn new(id: &str, ds: &Dataset) -> Self {
        DatasetSummary {
            id: id.to_owned(),
            objects: ds.num_objects(),
            queries: ds.num_queries(),
            object_groups: ds.num_object_groups(),
            query_groups: ds.num_query_groups(),
            noise: ds.noise_block().is_some(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub dataset: String,
    pub strategy: StrategyKind,
    #[serde(default)]
    pub tie_break: Option<TieBreak>,
    /// Stopping rule for `gbs`: `object` (default) or `group`.
    #[serde(default)]
    pub gbs_objective: Option<Objective>,
    /// Overrides the dataset's own noise block for noisy strategies.
    #[serde(default)]
    pub noise: Option<NoiseBlock>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerRequest {
    pub query: String,
    pub response: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub query: String,
    pub response: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub outcome: OutcomeDoc,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub dataset: String,
    pub strategy: StrategyKind,
    pub status: StatusDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggestion: Option<SuggestionDoc>,
    pub history: Vec<HistoryEntry>,
    pub surviving: usize,
    pub top_candidates: Vec<Candidate>,
}

impl SessionView {
    /// Computes the pending suggestion if needed, so the view is complete.
    fn new(id: &str, entry: &mut SessionEntry) -> Self {
        let s = &mut entry.session;
        let suggestion = match s.status() {
            Status::Active => s.suggest().ok(),
            _ => None,
        };
        let ds = s.dataset().clone();
        SessionView {
            id: id.to_owned(),
            dataset: entry.dataset.clone(),
            strategy: s.kind(),
            status: StatusDoc::new(&ds, s.status()),
            suggestion: suggestion.map(|x| SuggestionDoc::new(&ds, &x)),
            history: s
                .history()
                .iter()
                .map(|&(q, r)| HistoryEntry { query: ds.query_id(q).to_owned(), response: r })
                .collect(),
            surviving: s.surviving(),
            top_candidates: s
                .top_candidates(TOP_K)
                .iter()
                .map(|(o, p)| Candidate { outcome: OutcomeDoc::new(&ds, o), p: *p })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeRequest {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub tie_break: Option<TieBreak>,
    /// Stopping rule for `gbs`; ignored by the other algorithms.
    #[serde(default)]
    pub objective: Option<Objective>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeResponse {
    pub tree: TreeDocument,
    pub evaluation: TreeEvaluation,
}

// ---------------------------------------------------------------------------
// Handlers

async fn upload_dataset(State(app): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<DatasetSummary>), ApiError> {
    let doc: ProblemDocument = parse(&body)?;
    let ds = Dataset::from_document(doc).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let summary = DatasetSummary::new("", &ds);
    let id = app.add_dataset(ds);
    Ok((StatusCode::CREATED, Json(DatasetSummary { id, ..summary })))
}

async fn list_datasets(State(app): State<AppState>) -> Json<Vec<DatasetSummary>> {
    let map = app.store.datasets.read().unwrap();
    Json(map.iter().map(|(id, ds)| DatasetSummary::new(id, ds)).collect())
}

async fn get_dataset(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<ProblemDocument>, ApiError> {
    Ok(Json(app.dataset(&id)?.to_document()))
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let req: CreateSession = parse(&body)?;
    let ds = app.dataset(&req.dataset)?;
    let noise = match &req.noise {
        Some(block) => Some(NoiseSpec::from_block(&ds, block).map_err(|e| ApiError::BadRequest(e.to_string()))?),
        None => None,
    };
    let config = SessionConfig {
        tie_break: req.tie_break.unwrap_or(TieBreak::LowestIndex),
        gbs_objective: req.gbs_objective.unwrap_or(Objective::Object),
    };
    let session = Session::start(ds, req.strategy, noise, config)?;
    let id = format!("s{}", app.store.next_session.fetch_add(1, Ordering::Relaxed) + 1);
    let mut entry = SessionEntry { dataset: req.dataset, session };
    let view = SessionView::new(&id, &mut entry);
    app.persist(&id, &entry.session)?;
    app.store.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(entry)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let entry = app.session(&id)?;
    let mut entry = entry.lock().unwrap();
    Ok(Json(SessionView::new(&id, &mut entry)))
}

async fn post_answer(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<SessionView>, ApiError> {
    let entry = app.session(&id)?;
    let req: AnswerRequest = parse(&body)?;
    if req.response > 1 {
        return Err(ApiError::BadRequest(format!("response must be 0 or 1, got {}", req.response)));
    }
    let mut entry = entry.lock().unwrap();
    let q = entry.session.dataset().query_index(&req.query).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let was_active = *entry.session.status() == Status::Active;
    entry.session.answer(q, req.response)?;
    app.persist(&id, &entry.session)?;
    let view = SessionView::new(&id, &mut entry);
    match entry.session.status() {
        Status::Failed(reason) if was_active => {
            Err(ApiError::Inconsistent { reason: reason.clone(), session: Box::new(view) })
        }
        _ => Ok(Json(view)),
    }
}

async fn get_transcript(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Transcript>, ApiError> {
    let entry = app.session(&id)?;
    let entry = entry.lock().unwrap();
    Ok(Json(entry.session.transcript()))
}

async fn build_tree(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<TreeResponse>, ApiError> {
    let ds = app.dataset(&id)?;
    let req: TreeRequest = parse(&body)?;
    let cfg = BuildConfig {
        objective: req.objective.unwrap_or(Objective::Object),
        tie_break: req.tie_break.unwrap_or(TieBreak::LowestIndex),
        ..BuildConfig::default()
    };
    // tree growth is CPU-bound
    let result = tokio::task::spawn_blocking(move || -> Result<TreeResponse, ApiError> {
        let tree = build(&ds, req.algorithm, &cfg).map_err(|e| match e {
            BuildError::Precondition(_) | BuildError::Dataset(_) => ApiError::BadRequest(e.to_string()),
            other => ApiError::Conflict(other.to_string()),
        })?;
        let evaluation = evaluate_by_formula(&tree, &ds).map_err(|e| ApiError::Internal(e.to_string()))?;
        Ok(TreeResponse { tree: export_tree(&tree, &ds), evaluation })
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(result))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/datasets", post(upload_dataset).get(list_datasets))
        .route("/datasets/{id}", get(get_dataset))
        .route("/datasets/{id}/trees", post(build_tree))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/answers", post(post_answer))
        .route("/sessions/{id}/transcript", get(get_transcript))
        .with_state(state)
}

/// Serves until the task is cancelled.
pub async fn serve(addr: &str, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
