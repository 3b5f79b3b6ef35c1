//! HTTP review API over a working directory.
//!
//! Reads serve the last committed state; a state file rewritten by another
//! process is picked up on the next request. Decision writes go through
//! one lock and are committed to disk before they are acknowledged.

use std::collections::BTreeMap;
use std::fs;
use std::sync::{Arc, Mutex, RwLock};
use std::time::SystemTime;

use axum::extract::{Path, Query, State as Extract};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kgloop_core::closed_loop::{report_files, PeriodMetrics};
use kgloop_core::expand::{now_timestamp, Page, ReviewDecision, ReviewState};
use kgloop_core::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::workspace::{State, Workspace};

pub const REVIEWER_HEADER: &str = "x-reviewer-id";

pub struct Service {
    ws: Workspace,
    current: RwLock<(Option<SystemTime>, Arc<State>)>,
    writer: Mutex<()>,
}

impl Service {
    pub fn open(ws: Workspace) -> anyhow::Result<Self> {
        let state = ws.state()?;
        let stamp = modified(&ws);
        Ok(Service {
            ws,
            current: RwLock::new((stamp, Arc::new(state))),
            writer: Mutex::new(()),
        })
    }

    /// The committed state, reloaded if the file changed underneath.
    fn snapshot(&self) -> Result<Arc<State>, ApiError> {
        let stamp = modified(&self.ws);
        {
            let cur = self.current.read().expect("poisoned");
            if cur.0 == stamp {
                return Ok(cur.1.clone());
            }
        }
        let fresh = Arc::new(self.ws.state().map_err(ApiError::internal)?);
        *self.current.write().expect("poisoned") = (stamp, fresh.clone());
        Ok(fresh)
    }

    fn post(&self, d: ReviewDecision) -> Result<ReviewState, ApiError> {
        let _guard = self.writer.lock().expect("poisoned");
        let mut next = (*self.snapshot()?).clone();
        let state = next.queue.post(d)?;
        self.ws.commit(&next).map_err(ApiError::internal)?;
        *self.current.write().expect("poisoned") = (modified(&self.ws), Arc::new(next));
        Ok(state)
    }
}

fn modified(ws: &Workspace) -> Option<SystemTime> {
    fs::metadata(ws.state_path()).and_then(|m| m.modified()).ok()
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/api/candidates", get(candidates))
        .route("/api/decisions", post(decisions))
        .route("/api/status", get(status))
        .route("/api/report/{run}", get(report))
        .with_state(service)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn internal(e: anyhow::Error) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}"))
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match e {
            CoreError::DuplicateVerdict { .. } | CoreError::AlreadyDecided(_) => StatusCode::CONFLICT,
            CoreError::UnknownCandidate(_) | CoreError::UnknownRun(_) => StatusCode::NOT_FOUND,
            CoreError::InvalidArgument(_) | CoreError::Parse { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct ListQuery {
    pub state: Option<String>,
    pub page: Option<usize>,
    pub page_size: Option<usize>,
}

async fn candidates(Extract(svc): Extract<Arc<Service>>, Query(q): Query<ListQuery>) -> Result<Json<Page>, ApiError> {
    let filter = match q.state.as_deref() {
        None | Some("") | Some("all") => None,
        Some(s) => Some(s.parse::<ReviewState>()?),
    };
    let page = svc.snapshot()?.queue.list(filter, q.page.unwrap_or(1), q.page_size.unwrap_or(20))?;
    Ok(Json(page))
}

/// A decision as posted; the reviewer may come from the header instead,
/// and a missing timestamp means now.
#[derive(Debug, Deserialize)]
pub struct DecisionBody {
    pub candidate_id: String,
    pub reviewer_id: Option<String>,
    pub q1_relevant: bool,
    pub q2_relation_ok: bool,
    pub timestamp: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecisionReply {
    pub candidate_id: String,
    pub review_state: ReviewState,
}

async fn decisions(
    Extract(svc): Extract<Arc<Service>>,
    headers: HeaderMap,
    Json(body): Json<DecisionBody>,
) -> Result<Json<DecisionReply>, ApiError> {
    let header = match headers.get(REVIEWER_HEADER) {
        Some(v) => Some(
            v.to_str()
                .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "reviewer header is not text"))?
                .to_string(),
        ),
        None => None,
    };
    let reviewer_id = match (header, body.reviewer_id) {
        (Some(h), Some(b)) if h != b => {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "reviewer header and body disagree"));
        }
        (Some(r), _) | (None, Some(r)) => r,
        (None, None) => return Err(ApiError::new(StatusCode::BAD_REQUEST, "missing X-Reviewer-Id header")),
    };
    let d = ReviewDecision {
        candidate_id: body.candidate_id,
        reviewer_id,
        q1_relevant: body.q1_relevant,
        q2_relation_ok: body.q2_relation_ok,
        timestamp: body.timestamp.unwrap_or_else(now_timestamp),
    };
    let candidate_id = d.candidate_id.clone();
    let review_state = tokio::task::spawn_blocking(move || svc.post(d))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(DecisionReply {
        candidate_id,
        review_state,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Status {
    pub mode: String,
    pub period: u32,
    pub nodes: usize,
    pub edges: usize,
    pub candidates: BTreeMap<ReviewState, usize>,
    pub decisions: usize,
    pub last: Option<PeriodMetrics>,
}

async fn status(Extract(svc): Extract<Arc<Service>>) -> Result<Json<Status>, ApiError> {
    let s = svc.snapshot()?;
    let (nodes, edges) = s.kg.stats();
    Ok(Json(Status {
        mode: s.mode.name().to_string(),
        period: s.period,
        nodes,
        edges,
        candidates: s.queue.counts(),
        decisions: s.queue.log().len(),
        last: s.metrics.last().cloned(),
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Report {
    pub run: String,
    /// file name to contents
    pub files: BTreeMap<String, String>,
}

/// An exported run, or `current` for the committed state.
async fn report(Extract(svc): Extract<Arc<Service>>, Path(run): Path<String>) -> Result<Json<Report>, ApiError> {
    let files = if run == "current" {
        report_files(&*svc.snapshot()?).into_iter().collect()
    } else {
        let dir = svc
            .ws
            .run_dir(&run)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
        if !dir.is_dir() {
            return Err(CoreError::UnknownRun(run).into());
        }
        read_files(&dir).map_err(|e| ApiError::internal(e.into()))?
    };
    Ok(Json(Report { run, files }))
}

fn read_files(dir: &std::path::Path) -> std::io::Result<BTreeMap<String, String>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        files.insert(entry.file_name().to_string_lossy().into_owned(), fs::read_to_string(entry.path())?);
    }
    Ok(files)
}
