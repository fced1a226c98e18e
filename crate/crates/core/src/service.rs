//! HTTP annotation API over a workspace.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::continuation::{render_frame_range, ContinuationIndex, IndexEntry};
use crate::judging::{annotator_accuracy, AnnotationInput, AnnotationStore, IngestError, Ingested, JudgeError};
use crate::stats::StatsError;
use crate::suite::{version_tag, Scenario, Suite};
use crate::workspace::{agent_report, ingest_input, pending_queue, timestamp, Workspace, WorkspaceError};

/// Source of `created_at` stamps.
pub type Clock = Arc<dyn Fn() -> String + Send + Sync>;

pub struct AppState {
    pub workspace: Workspace,
    pub store: AnnotationStore,
    pub index: ContinuationIndex,
    pub scenarios: HashMap<String, Scenario>,
    pub suites: Vec<Suite>,
    pub clock: Clock,
}

impl AppState {
    /// Loads the immutable artifacts and opens the annotation store.
    pub fn load(workspace: Workspace) -> Result<Self, WorkspaceError> {
        Ok(Self {
            store: workspace.open_store()?,
            index: workspace.load_index()?,
            scenarios: workspace.scenarios()?,
            suites: workspace.suites()?,
            workspace,
            clock: Arc::new(timestamp),
        })
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    fn entry(&self, id: &str) -> Result<&IndexEntry, ApiError> {
        self.index.get(id).ok_or_else(|| ApiError::not_found("continuation", id))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": kind, "message": message.into() }),
        }
    }

    fn not_found(kind: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {kind} {id:?}"))
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        let status = match &e {
            IngestError::UnknownContinuation { .. } => StatusCode::NOT_FOUND,
            IngestError::Conflict { .. } => StatusCode::CONFLICT,
            IngestError::OutOfRange { .. } | IngestError::EmptyAnnotator => StatusCode::UNPROCESSABLE_ENTITY,
            IngestError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = serde_json::to_value(&e).unwrap_or_else(|_| json!({}));
        body["message"] = Value::String(e.to_string());
        Self { status, body }
    }
}

impl From<WorkspaceError> for ApiError {
    fn from(e: WorkspaceError) -> Self {
        match e {
            WorkspaceError::Unknown { kind, id } => Self::not_found(kind, &id),
            WorkspaceError::Stats(StatsError::Unannotated(missing)) => Self {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: json!({
                    "error": "unannotated",
                    "message": format!("{} continuations have no annotation", missing.len()),
                    "missing": missing,
                }),
            },
            WorkspaceError::Stats(StatsError::Suite(s)) => Self::bad_request(s.to_string()),
            WorkspaceError::Stats(e @ StatsError::NoContinuations(_)) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "no_continuations", e.to_string())
            }
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/pending", get(pending))
        .route("/api/continuations/{id}", get(continuation))
        .route("/api/continuations/{id}/frames", get(frames))
        .route("/api/annotations", post(post_annotation))
        .route("/api/annotators/{id}/accuracy", get(accuracy))
        .route("/api/reports/{agent}", get(report))
        .with_state(state)
}

/// Serves `state` on `addr` until the process ends.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(Arc::new(state))).await
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Debug, Deserialize)]
struct PendingQuery {
    annotator: Option<String>,
}

async fn pending(State(st): State<Arc<AppState>>, Query(q): Query<PendingQuery>) -> ApiResult<Json<Vec<String>>> {
    let annotator = q
        .annotator
        .filter(|a| !a.trim().is_empty())
        .ok_or_else(|| ApiError::bad_request("annotator query parameter is required"))?;
    let refs = st.workspace.load_references()?;
    Ok(Json(pending_queue(
        &st.index,
        &st.store,
        &refs,
        &annotator,
        st.workspace.config.reference_rate,
    )))
}

/// What an annotator sees about a continuation. The agent is withheld.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContinuationMeta {
    pub continuation_id: String,
    pub scenario_id: String,
    pub category: String,
    pub instruction_text: String,
    pub context_start: u64,
    pub takeover_tick: u64,
    pub frame_count: u64,
}

async fn continuation(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<ContinuationMeta>> {
    let e = st.entry(&id)?;
    let sc = st
        .scenarios
        .get(&e.scenario_id)
        .ok_or_else(|| ApiError::not_found("scenario", &e.scenario_id))?;
    Ok(Json(ContinuationMeta {
        continuation_id: e.continuation_id.clone(),
        scenario_id: e.scenario_id.clone(),
        category: sc.category.clone(),
        instruction_text: sc.instruction_text.clone(),
        context_start: sc.context_start(),
        takeover_tick: e.takeover_tick,
        frame_count: e.length,
    }))
}

#[derive(Debug, Deserialize)]
struct FrameQuery {
    from: Option<u64>,
    to: Option<u64>,
}

async fn frames(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<FrameQuery>,
) -> ApiResult<Response> {
    let e = st.entry(&id)?.clone();
    let last = e.length.saturating_sub(1);
    let from = q.from.unwrap_or(0);
    let to = q.to.unwrap_or(last).min(last);
    if q.from.unwrap_or(0) > q.to.unwrap_or(u64::MAX) {
        return Err(ApiError::bad_request(format!("from {from} is after to {}", q.to.unwrap_or(0))));
    }
    let st2 = st.clone();
    let frames = tokio::task::spawn_blocking(move || {
        let ep = st2.workspace.load_continuation_episode(&e)?;
        render_frame_range(&ep, e.takeover_tick, from, to)
            .map_err(|r| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "replay", r.to_string()))
    })
    .await
    .map_err(|j| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", j.to_string()))??;
    Ok(Json(frames).into_response())
}

async fn post_annotation(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let input: AnnotationInput =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed annotation: {e}")))?;
    let created_at = (st.clock)();
    let st2 = st.clone();
    let result = tokio::task::spawn_blocking(move || ingest_input(&st2.store, &st2.index, input, &created_at))
        .await
        .map_err(|j| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", j.to_string()))??;
    Ok(match result {
        Ingested::Created(a) => (StatusCode::CREATED, Json(a)).into_response(),
        Ingested::Existing(a) => (StatusCode::OK, Json(a)).into_response(),
    })
}

async fn accuracy(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let refs = st.workspace.load_references()?;
    match annotator_accuracy(&id, &refs, &st.store.all()) {
        Ok(a) => Ok(Json(a).into_response()),
        Err(JudgeError::NoOverlap(_)) => Err(ApiError::not_found("annotator", &id)),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())),
    }
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    version: Option<String>,
    suite: Option<String>,
}

async fn report(
    State(st): State<Arc<AppState>>,
    Path(agent): Path<String>,
    Query(q): Query<ReportQuery>,
) -> ApiResult<Response> {
    let suite = match &q.suite {
        Some(id) => st.suites.iter().find(|s| &s.suite_id == id),
        None if st.suites.len() == 1 => st.suites.first(),
        None => st.suites.iter().find(|s| s.suite_id == crate::suite::CurationOptions::default().suite_id),
    }
    .ok_or_else(|| ApiError::not_found("suite", q.suite.as_deref().unwrap_or("")))?;
    let version = q.version.unwrap_or_else(|| version_tag(suite.version));
    let r = agent_report(&st.workspace, &st.store, suite, &agent, &version)?;
    Ok(Json(r).into_response())
}
