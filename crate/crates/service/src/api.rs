//! HTTP surface.

use std::collections::BTreeSet;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, NaiveDate, NaiveTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, CorsLayer};

use ticketsearch_core::engine::{SearchError, SearchRequest, SearchResponse, MAX_FINAL_K};
use ticketsearch_core::index::FilterSet;
use ticketsearch_core::ingest::{IngestError, JobKind};
use ticketsearch_core::SourceType;

use crate::app::AppState;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    field: Option<String>,
}

impl ApiError {
    pub fn bad_request(message: impl Into<String>, field: Option<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "invalid_request",
            message: message.into(),
            field,
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code: "internal",
            message: message.into(),
            field: None,
        }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.field {
            Some(field) => write!(f, "{field}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "code": self.code, "message": self.message });
        if let Some(field) = self.field {
            error["field"] = Value::String(field);
        }
        (self.status, Json(json!({ "error": error }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request(r.body_text(), None)
    }
}

impl From<SearchError> for ApiError {
    fn from(e: SearchError) -> Self {
        let field = match &e {
            SearchError::EmptyQuery => "query",
            SearchError::Invalid { field, .. } => field,
        };
        ApiError::bad_request(e.to_string(), Some(field.to_string()))
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Validation { field, message } => ApiError::bad_request(message, Some(field)),
            IngestError::UnknownJob(id) => ApiError {
                status: StatusCode::NOT_FOUND,
                code: "not_found",
                message: format!("unknown job {id}"),
                field: None,
            },
            IngestError::QueueClosed => ApiError {
                status: StatusCode::SERVICE_UNAVAILABLE,
                code: "unavailable",
                message: e.to_string(),
                field: None,
            },
            other => ApiError::internal(other.to_string()),
        }
    }
}

pub fn router(state: AppState, cors_origins: &[String]) -> Router {
    let origins: Vec<HeaderValue> = cors_origins
        .iter()
        .filter_map(|o| HeaderValue::from_str(o).ok())
        .collect();
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::list(origins))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/health", get(health))
        .route("/search", post(search))
        .route("/ingest/rt-weekly", post(|s, b| ingest(JobKind::RtWeekly, s, b)))
        .route("/ingest/web", post(|s, b| ingest(JobKind::Web, s, b)))
        .route("/ingest/pdf", post(|s, b| ingest(JobKind::Pdf, s, b)))
        .route("/ingest/repo-docs", post(|s, b| ingest(JobKind::RepoDocs, s, b)))
        .route("/jobs", get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .fallback(not_found)
        .layer(cors)
        .with_state(state)
}

async fn not_found() -> ApiError {
    ApiError {
        status: StatusCode::NOT_FOUND,
        code: "not_found",
        message: "no such endpoint".into(),
        field: None,
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub generation: u64,
    pub documents: usize,
    pub embedder_id: String,
    pub reranker_id: String,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    let snapshot = state.manager.snapshot();
    Json(Health {
        status: "ok".into(),
        generation: snapshot.generation,
        documents: snapshot.documents(),
        embedder_id: snapshot.context.embedder.identity(),
        reranker_id: snapshot.context.reranker.identity(),
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBody {
    pub query: String,
    #[serde(default)]
    pub final_k: Option<usize>,
    #[serde(default)]
    pub department: Option<String>,
    #[serde(default)]
    pub date_from: Option<String>,
    #[serde(default)]
    pub date_to: Option<String>,
    #[serde(default)]
    pub source_types: Option<BTreeSet<SourceType>>,
}

/// RFC 3339 instant, or a bare `YYYY-MM-DD` covering the whole day.
fn parse_bound(field: &str, value: &str, end_of_day: bool) -> Result<DateTime<Utc>, ApiError> {
    if let Ok(ts) = DateTime::parse_from_rfc3339(value) {
        return Ok(ts.with_timezone(&Utc));
    }
    let date = NaiveDate::parse_from_str(value, "%Y-%m-%d").map_err(|_| {
        ApiError::bad_request(
            format!("{field}: expected an RFC 3339 timestamp or YYYY-MM-DD, got {value:?}"),
            Some(field.into()),
        )
    })?;
    let time = if end_of_day {
        NaiveTime::from_hms_opt(23, 59, 59).expect("valid time")
    } else {
        NaiveTime::MIN
    };
    Ok(date.and_time(time).and_utc())
}

impl SearchBody {
    pub fn into_request(self) -> Result<SearchRequest, ApiError> {
        if self.query.trim().is_empty() {
            return Err(SearchError::EmptyQuery.into());
        }
        if let Some(k) = self.final_k {
            if k == 0 || k > MAX_FINAL_K {
                return Err(ApiError::bad_request(
                    format!("final_k must lie in 1..={MAX_FINAL_K}"),
                    Some("final_k".into()),
                ));
            }
        }
        let date_from = self.date_from.as_deref().map(|v| parse_bound("date_from", v, false)).transpose()?;
        let date_to = self.date_to.as_deref().map(|v| parse_bound("date_to", v, true)).transpose()?;
        if let (Some(from), Some(to)) = (date_from, date_to) {
            if from > to {
                return Err(ApiError::bad_request("date_from is after date_to", Some("date_from".into())));
            }
        }
        Ok(SearchRequest {
            query: self.query,
            final_k: self.final_k,
            filters: FilterSet {
                department: self.department.filter(|d| !d.trim().is_empty()),
                date_from,
                date_to,
                source_types: self.source_types.filter(|s| !s.is_empty()),
            },
        })
    }
}

async fn search(
    State(state): State<AppState>,
    body: Result<Json<SearchBody>, JsonRejection>,
) -> Result<Json<SearchResponse>, ApiError> {
    let request = body?.0.into_request()?;
    // pin the snapshot before leaving the async context
    let snapshot = state.manager.snapshot();
    let response = tokio::task::spawn_blocking(move || snapshot.search(&request))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(response))
}

async fn ingest(
    kind: JobKind,
    State(state): State<AppState>,
    body: Result<Json<Value>, JsonRejection>,
) -> Result<(StatusCode, Json<Value>), ApiError> {
    let body = body?.0;
    let orchestrator = state.orchestrator.clone();
    let job_id = tokio::task::spawn_blocking(move || orchestrator.submit_job(kind, body))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))))
}

async fn list_jobs(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    let orchestrator = state.orchestrator.clone();
    let jobs = tokio::task::spawn_blocking(move || orchestrator.jobs().list())
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(json!({ "jobs": jobs })))
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let orchestrator = state.orchestrator.clone();
    let manifest = tokio::task::spawn_blocking(move || orchestrator.jobs().load(&id))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(serde_json::to_value(manifest).map_err(|e| ApiError::internal(e.to_string()))?))
}
