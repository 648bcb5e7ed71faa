//! Read-only HTTP API over a directory of studies.
//!
//! | route                                   | response                                  |
//! |-----------------------------------------|-------------------------------------------|
//! | `GET /api/studies`                      | study list with mode, direction, counts   |
//! | `GET /api/studies/{id}/trials`          | rows, or a grouped table with `group_by`/`agg` |
//! | `GET /api/studies/{id}/leaderboard?k=`  | top-k complete trials, best first         |
//! | `GET /api/studies/{id}/plot?x=&y=&group_by=` | labeled series sorted by x           |
//! | `GET /api/studies/{id}/trials/{tid}`    | full trial record with its curve          |
//! | `GET /api/studies/{id}/events?since=`   | journal records with `seq > since`        |
//!
//! Every request reads a fresh snapshot of the journal (a torn tail from a live
//! writer is ignored). Errors are `{"error": <code>, "reason": <text>}` with an
//! optional `token` naming the offending input.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use milsweep_core::pruner::{HyperbandSchedule, PrunerKind};
use milsweep_core::results::{self, parse_filters, Aggregate, ResultRow, ResultSet};
use milsweep_core::trial::{JournalRecord, StudyMode, StudyState, TrialRecord, TrialState};
use milsweep_core::{Direction, QueryError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as JsonValue};
use tower_http::services::ServeDir;

use crate::error::Error;
use crate::export::result_set;
use crate::journal::{journal_exists, load_snapshot, JOURNAL_FILE};

#[derive(Clone, Debug)]
pub struct ServiceState {
    root: Arc<PathBuf>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    reason: String,
    token: Option<String>,
}

impl ApiError {
    fn not_found(reason: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            code: "not_found",
            reason: reason.into(),
            token: None,
        }
    }

    fn bad_request(reason: impl Into<String>, token: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request",
            reason: reason.into(),
            token: Some(token.into()),
        }
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        let token = match &e {
            QueryError::UnknownColumn(t)
            | QueryError::MalformedFilter(t)
            | QueryError::NotNumeric(t)
            | QueryError::UnknownAggregate(t) => t.clone(),
        };
        ApiError::bad_request(e.to_string(), token)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: e.code(),
            reason: e.to_string(),
            token: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "reason": self.reason });
        if let Some(t) = self.token {
            body["token"] = JsonValue::String(t);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Router for the API; `ui_dir` (built explorer assets) is served under `/`.
pub fn router(root: impl Into<PathBuf>, ui_dir: Option<&Path>) -> Router {
    let state = ServiceState {
        root: Arc::new(root.into()),
    };
    let api = Router::new()
        .route("/api/studies", get(list_studies))
        .route("/api/studies/{id}/trials", get(trials))
        .route("/api/studies/{id}/trials/{tid}", get(trial))
        .route("/api/studies/{id}/leaderboard", get(leaderboard))
        .route("/api/studies/{id}/plot", get(plot))
        .route("/api/studies/{id}/events", get(events))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(root: PathBuf, bind: &str, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    axum::serve(listener, router(root, ui_dir.as_deref())).await
}

/// Study directories under the root (the root itself counts if it holds a
/// journal), keyed by directory name.
fn study_dirs(root: &Path) -> BTreeMap<String, PathBuf> {
    let mut out = BTreeMap::new();
    if journal_exists(root) {
        if let Some(name) = root.file_name() {
            out.insert(name.to_string_lossy().into_owned(), root.to_path_buf());
        }
    }
    if let Ok(entries) = fs::read_dir(root) {
        for e in entries.flatten() {
            let path = e.path();
            if journal_exists(&path) {
                out.insert(e.file_name().to_string_lossy().into_owned(), path);
            }
        }
    }
    out
}

struct Snapshot {
    state: StudyState,
    records: Vec<JournalRecord>,
}

async fn snapshot(root: &Path, id: &str) -> Result<Snapshot, ApiError> {
    let dir = study_dirs(root)
        .remove(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown study `{id}`")))?;
    let path = dir.join(JOURNAL_FILE);
    let (state, records) = tokio::task::spawn_blocking(move || load_snapshot(&path))
        .await
        .map_err(|e| ApiError::from(Error::Io {
            path: dir.clone(),
            source: std::io::Error::other(e),
        }))??;
    Ok(Snapshot { state, records })
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct StudySummary {
    pub id: String,
    pub study_id: String,
    pub mode: StudyMode,
    pub direction: Direction,
    pub label: String,
    pub budget: u64,
    pub trials: usize,
    pub counts: BTreeMap<String, usize>,
    pub last_seq: u64,
}

fn counts(state: &StudyState) -> BTreeMap<String, usize> {
    [
        TrialState::Created,
        TrialState::Running,
        TrialState::Pruned,
        TrialState::Complete,
        TrialState::Failed,
    ]
    .into_iter()
    .map(|s| (s.as_str().to_string(), state.count(s)))
    .collect()
}

async fn list_studies(State(s): State<ServiceState>) -> ApiResult<JsonValue> {
    let mut studies = Vec::new();
    for id in study_dirs(&s.root).into_keys() {
        // A study whose journal is unreadable is skipped rather than failing the list.
        let Ok(snap) = snapshot(&s.root, &id).await else { continue };
        let meta = snap.state.meta.as_ref().expect("snapshot has header");
        studies.push(StudySummary {
            study_id: meta.study_id.clone(),
            mode: meta.mode,
            direction: meta.direction,
            label: meta.label.clone(),
            budget: meta.budget,
            trials: snap.state.trials.len(),
            counts: counts(&snap.state),
            last_seq: snap.state.last_seq.unwrap_or(0),
            id,
        });
    }
    Ok(Json(json!({ "studies": studies })))
}

#[derive(Debug, Deserialize)]
struct TrialsQuery {
    filter: Option<String>,
    group_by: Option<String>,
    agg: Option<String>,
    metric: Option<String>,
}

fn split_list(s: &Option<String>) -> Vec<String> {
    s.as_deref()
        .map(|v| v.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect())
        .unwrap_or_default()
}

async fn trials(
    State(s): State<ServiceState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<TrialsQuery>,
) -> ApiResult<JsonValue> {
    let snap = snapshot(&s.root, &id).await?;
    let set = result_set(&snap.state)?;
    let filters = parse_filters(q.filter.as_deref().unwrap_or(""))?;
    let group_by = split_list(&q.group_by);
    let aggs = split_list(&q.agg)
        .iter()
        .map(|a| Aggregate::parse(a))
        .collect::<Result<Vec<_>, _>>()?;
    if group_by.is_empty() && aggs.is_empty() {
        let rows: Vec<&ResultRow> = results::filter_rows(&set, &filters)?;
        return Ok(Json(json!({
            "study": id,
            "direction": set.direction,
            "columns": set.columns,
            "count": rows.len(),
            "rows": rows,
        })));
    }
    let table = results::query(
        &set,
        &results::Query {
            filters,
            group_by,
            aggregates: aggs,
            metric: q.metric,
        },
    )?;
    Ok(Json(json!({
        "study": id,
        "direction": set.direction,
        "group_by": table.group_by,
        "metric": table.metric,
        "groups": table.groups,
    })))
}

#[derive(Debug, Deserialize)]
struct LeaderboardQuery {
    k: Option<String>,
}

async fn leaderboard(
    State(s): State<ServiceState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<LeaderboardQuery>,
) -> ApiResult<JsonValue> {
    let k = match q.k.as_deref() {
        None => 10,
        Some(t) => t
            .parse::<usize>()
            .map_err(|_| ApiError::bad_request("k must be a non-negative integer", t))?,
    };
    let snap = snapshot(&s.root, &id).await?;
    let set: ResultSet = result_set(&snap.state)?;
    let rows = results::leaderboard(&set, k);
    Ok(Json(json!({
        "study": id,
        "direction": set.direction,
        "k": k,
        "rows": rows,
    })))
}

#[derive(Debug, Deserialize)]
struct PlotQuery {
    x: Option<String>,
    y: Option<String>,
    group_by: Option<String>,
    transform: Option<String>,
}

async fn plot(
    State(s): State<ServiceState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<PlotQuery>,
) -> ApiResult<JsonValue> {
    let x = q.x.ok_or_else(|| ApiError::bad_request("missing x", "x"))?;
    let y = q.y.ok_or_else(|| ApiError::bad_request("missing y", "y"))?;
    let snap = snapshot(&s.root, &id).await?;
    let set = result_set(&snap.state)?;
    let mut series = results::plot_series(&set, &x, &y, q.group_by.as_deref())?;
    match q.transform.as_deref() {
        None => {}
        Some("best_so_far") => {
            for s in &mut series {
                let ys: Vec<f64> = s.points.iter().map(|p| p.1).collect();
                for (p, b) in s.points.iter_mut().zip(results::best_so_far(&ys, set.direction)) {
                    p.1 = b;
                }
            }
        }
        Some(other) => return Err(ApiError::bad_request("unknown transform", other)),
    }
    Ok(Json(json!({
        "study": id,
        "x": x,
        "y": y,
        "group_by": q.group_by,
        "series": series,
    })))
}

#[derive(Debug, Serialize)]
struct TrialDetail<'a> {
    #[serde(flatten)]
    record: &'a TrialRecord,
    /// Rung budgets of the trial's Hyperband bracket, if any.
    rungs: Option<Vec<u32>>,
}

async fn trial(
    State(s): State<ServiceState>,
    UrlPath((id, tid)): UrlPath<(String, String)>,
) -> ApiResult<JsonValue> {
    let tid: u64 = tid
        .parse()
        .map_err(|_| ApiError::bad_request("trial id must be an integer", tid.clone()))?;
    let snap = snapshot(&s.root, &id).await?;
    let record = snap
        .state
        .trials
        .get(&tid)
        .ok_or_else(|| ApiError::not_found(format!("unknown trial {tid} in study `{id}`")))?;
    let rungs = match (&snap.state.meta.as_ref().and_then(|m| m.pruner.clone()), record.bracket) {
        (
            Some(PrunerKind::Hyperband {
                r_min, max_budget, eta, ..
            }),
            Some(b),
        ) => HyperbandSchedule::new(*r_min, *max_budget, *eta)
            .ok()
            .map(|sch| sch.rungs(b).to_vec()),
        _ => None,
    };
    Ok(Json(serde_json::to_value(TrialDetail { record, rungs }).map_err(Error::from)?))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    since: Option<String>,
}

async fn events(
    State(s): State<ServiceState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EventsQuery>,
) -> ApiResult<JsonValue> {
    let since = match q.since.as_deref() {
        None => 0,
        Some(t) => t
            .parse::<u64>()
            .map_err(|_| ApiError::bad_request("since must be a non-negative integer", t))?,
    };
    let snap = snapshot(&s.root, &id).await?;
    let events: Vec<&JournalRecord> = snap.records.iter().filter(|r| r.seq > since).collect();
    Ok(Json(json!({
        "study": id,
        "since": since,
        "last_seq": snap.state.last_seq.unwrap_or(0),
        "events": events,
    })))
}
