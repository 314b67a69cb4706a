use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use nextbest::dcr::{ConformanceVerdict, MarkingSets};
use nextbest::eventlog::{Event, KpiMode};
use nextbest::recommender::{CaseStatus, Recommendation, RecommenderError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::store::{CaseSession, HistoryEntry, JournalEntry};
use crate::{Shared, SCHEMA_VERSION};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(case_id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "case_not_found", format!("no case with id {case_id:?}"))
    }

    fn invalid(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    fn body(&self) -> serde_json::Value {
        json!({ "code": self.code, "message": self.message })
    }
}

impl From<RecommenderError> for ApiError {
    fn from(e: RecommenderError) -> Self {
        match e {
            RecommenderError::State(m) => ApiError::new(StatusCode::CONFLICT, "case_terminated", m),
            RecommenderError::Precondition(m) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "precondition_failed", m),
            RecommenderError::EventLog(e) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_event", e.to_string()),
            RecommenderError::Predictor(e) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "prediction_failed", e.to_string())
            }
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "schema_version": SCHEMA_VERSION, "error": self.body() });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("malformed JSON body: {e}")))
}

pub fn router(state: Arc<Shared>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/meta", get(meta))
        .route("/cases", post(create_case))
        .route("/cases/{id}", get(get_case))
        .route("/cases/{id}/events", post(append_event))
        .route("/cases/{id}/recommendation", get(recommendation))
        .route("/cases/{id}/what-if", post(what_if))
        .with_state(state)
}

async fn health(State(state): State<Arc<Shared>>) -> Json<serde_json::Value> {
    Json(json!({
        "schema_version": SCHEMA_VERSION,
        "status": "ok",
        "cases": state.store.len().await,
    }))
}

async fn meta(State(state): State<Arc<Shared>>) -> Json<serde_json::Value> {
    let engine = &state.engine;
    Json(json!({
        "schema_version": SCHEMA_VERSION,
        "vocabulary": engine.vocabulary().names(),
        "vocabulary_fingerprint": engine.vocabulary().fingerprint(),
        "graph_activities": engine.graph().activities(),
        "threshold": engine.threshold(),
        "artifacts": engine.hashes(),
        "default_k": state.config.default_k,
        "kpi_mode": state.config.kpi_mode,
    }))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CreateCase {
    case_id: Option<String>,
}

async fn create_case(State(state): State<Arc<Shared>>, body: Bytes) -> ApiResult<Response> {
    let req: CreateCase = parse_body(&body)?;
    let case_id = match req.case_id {
        Some(id) if id.trim().is_empty() => return Err(ApiError::invalid("case_id must not be empty")),
        Some(id) => id,
        None => uuid::Uuid::new_v4().to_string(),
    };
    let now = Utc::now();
    let session = CaseSession::new(&case_id, state.engine.graph(), now);
    let shared = state.store.insert(session).await.map_err(|_| {
        ApiError::new(StatusCode::CONFLICT, "case_exists", format!("case {case_id:?} already exists"))
    })?;
    let guard = shared.lock().await;
    state.journal(&JournalEntry::Create { case_id, at: now })?;
    let snapshot = guard.snapshot(state.engine.graph(), state.engine.threshold().value);
    Ok((StatusCode::CREATED, Json(snapshot)).into_response())
}

async fn get_case(State(state): State<Arc<Shared>>, Path(id): Path<String>) -> ApiResult<Response> {
    let shared = state.store.get(&id).await.ok_or_else(|| ApiError::not_found(&id))?;
    let guard = shared.lock().await;
    Ok(Json(guard.snapshot(state.engine.graph(), state.engine.threshold().value)).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AppendEvent {
    activity: String,
    kpi: Option<f64>,
    timestamp: Option<DateTime<Utc>>,
}

fn seconds_between(earlier: Option<DateTime<Utc>>, later: DateTime<Utc>) -> f64 {
    earlier.map_or(0.0, |e| ((later - e).num_milliseconds() as f64 / 1000.0).max(0.0))
}

async fn append_event(State(state): State<Arc<Shared>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Err(ApiError::invalid("body must name an activity"));
    }
    let req: AppendEvent = parse_body(&body)?;
    let shared = state.store.get(&id).await.ok_or_else(|| ApiError::not_found(&id))?;
    let engine = &state.engine;
    let known = engine.vocabulary().contains(&req.activity);
    if !known && engine.graph().options().strict {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "unknown_activity",
            format!("activity {:?} is not in the vocabulary", req.activity),
        ));
    }

    let mut guard = shared.lock().await;
    if guard.case.status() == CaseStatus::Terminated {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "case_terminated",
            format!("case {id:?} is already terminated"),
        ));
    }
    let previous = guard.case.events().last().and_then(|e| e.timestamp);
    let (timestamp, kpi) = match (state.config.kpi_mode, req.kpi) {
        (_, Some(kpi)) => (req.timestamp, kpi),
        (KpiMode::InterEventDuration, None) => {
            let ts = req.timestamp.unwrap_or_else(Utc::now);
            (Some(ts), seconds_between(previous, ts))
        }
        (KpiMode::ExplicitColumn, None) => (req.timestamp, 0.0),
    };
    let mut next = guard.case.clone();
    next.push(&req.activity, kpi, timestamp).map_err(|e| match e {
        RecommenderError::EventLog(e) => ApiError::invalid(e.to_string()),
        other => ApiError::from(other),
    })?;
    let now = Utc::now();
    state.journal(&JournalEntry::Append {
        case_id: id.clone(),
        activity: req.activity.clone(),
        kpi,
        timestamp,
        at: now,
    })?;
    guard.case = next;
    if !known {
        guard.unknown_activities.push(req.activity);
    }
    guard.updated_at = now;
    guard.replay(engine.graph());
    Ok(Json(guard.snapshot(engine.graph(), engine.threshold().value)).into_response())
}

#[derive(Debug, Deserialize)]
struct KQuery {
    k: Option<usize>,
}

#[derive(Serialize)]
struct RecommendationResponse {
    schema_version: u32,
    case_id: String,
    k: usize,
    prefix_len: usize,
    threshold: f64,
    recommendation: Recommendation,
}

async fn run_blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("recommendation task failed: {e}")))
}

fn resolve_k(state: &Shared, k: Option<usize>) -> ApiResult<usize> {
    match k.unwrap_or(state.config.default_k) {
        0 => Err(ApiError::invalid("k must be at least 1")),
        k => Ok(k),
    }
}

async fn recommendation(
    State(state): State<Arc<Shared>>,
    Path(id): Path<String>,
    Query(query): Query<KQuery>,
) -> ApiResult<Response> {
    let k = resolve_k(&state, query.k)?;
    let shared = state.store.get(&id).await.ok_or_else(|| ApiError::not_found(&id))?;
    let case = shared.lock().await.case.clone();
    let prefix_len = case.len();
    let worker = state.clone();
    let rec = run_blocking(move || worker.engine.recommend(&case, k)).await??;
    shared.lock().await.history.push(HistoryEntry {
        prefix_len,
        k,
        recommendation: rec.clone(),
    });
    Ok(Json(RecommendationResponse {
        schema_version: SCHEMA_VERSION,
        case_id: id,
        k,
        prefix_len,
        threshold: state.engine.threshold().value,
        recommendation: rec,
    })
    .into_response())
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum HypotheticalStep {
    Name(String),
    Event { activity: String, kpi: Option<f64> },
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct WhatIf {
    activities: Vec<HypotheticalStep>,
    k: Option<usize>,
}

#[derive(Serialize)]
struct WhatIfResponse {
    schema_version: u32,
    case_id: String,
    k: usize,
    events: Vec<Event>,
    total_kpi: f64,
    status: CaseStatus,
    conformance: ConformanceVerdict,
    marking: Option<MarkingSets>,
    enabled_activities: Vec<String>,
    threshold: f64,
    recommendation: Option<Recommendation>,
    recommendation_error: Option<serde_json::Value>,
}

/// Projects the case as if `activities` happened next. Nothing is stored.
async fn what_if(State(state): State<Arc<Shared>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: WhatIf = parse_body(&body)?;
    let k = resolve_k(&state, req.k)?;
    let shared = state.store.get(&id).await.ok_or_else(|| ApiError::not_found(&id))?;
    let mut case = shared.lock().await.case.clone();
    for step in req.activities {
        let (activity, kpi) = match step {
            HypotheticalStep::Name(a) => (a, 0.0),
            HypotheticalStep::Event { activity, kpi } => (activity, kpi.unwrap_or(0.0)),
        };
        case.push(&activity, kpi, None).map_err(|e| match e {
            RecommenderError::State(m) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "case_terminated", m),
            RecommenderError::EventLog(e) => ApiError::invalid(e.to_string()),
            other => ApiError::from(other),
        })?;
    }
    let worker = state.clone();
    let projected = case.clone();
    let outcome = run_blocking(move || {
        if projected.is_terminated() {
            None
        } else {
            Some(worker.engine.recommend(&projected, k))
        }
    })
    .await?;
    let (recommendation, recommendation_error) = match outcome {
        None => (None, None),
        Some(Ok(rec)) => (Some(rec), None),
        Some(Err(e)) => (None, Some(ApiError::from(e).body())),
    };
    let graph = state.engine.graph();
    let replayed = graph.replay(&case.activities());
    let (conformance, marking, enabled) = match &replayed {
        Ok(m) => (
            ConformanceVerdict::conformant(),
            Some(graph.marking_sets(m)),
            graph.enabled_activities(m).into_iter().map(str::to_owned).collect(),
        ),
        Err(v) => (v.clone(), None, Vec::new()),
    };
    Ok(Json(WhatIfResponse {
        schema_version: SCHEMA_VERSION,
        case_id: id,
        k,
        events: case.events().to_vec(),
        total_kpi: case.total_kpi(),
        status: case.status(),
        conformance,
        marking,
        enabled_activities: enabled,
        threshold: state.engine.threshold().value,
        recommendation,
        recommendation_error,
    })
    .into_response())
}

impl Shared {
    fn journal(&self, entry: &JournalEntry) -> ApiResult<()> {
        match &self.journal {
            Some(j) => j
                .record(entry)
                .map_err(|e| ApiError::internal(format!("journal {}: {e}", j.path().display()))),
            None => Ok(()),
        }
    }
}
