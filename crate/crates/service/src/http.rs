//! HTTP routes over [`SurveyService`].

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use indexmap::IndexMap;
use serde::Deserialize;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::error::ServiceError;
use crate::service::{ChoiceAck, CreatedSession, QuestionView, QuestionnaireAck, SessionSummary, SurveyService, TaskPayload};

type Shared = State<Arc<SurveyService>>;

/// All routes, with CORS open to `cors_origin` (any origin when `None`).
pub fn router(service: Arc<SurveyService>, cors_origin: Option<&str>) -> Router {
    let origin = match cors_origin.and_then(|o| o.parse().ok()) {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_summary))
        .route("/sessions/{id}/tasks/next", get(next_task))
        .route("/sessions/{id}/tasks/{n}/choice", post(record_choice))
        .route("/sessions/{id}/questionnaire", post(submit_questionnaire))
        .route("/questionnaire", get(questionnaire))
        .route("/export", get(export))
        .layer(cors)
        .with_state(service)
}

async fn create_session(State(svc): Shared) -> Result<Json<CreatedSession>, ServiceError> {
    svc.create_session().map(Json)
}

async fn session_summary(State(svc): Shared, Path(id): Path<String>) -> Result<Json<SessionSummary>, ServiceError> {
    svc.summary(&id).map(Json)
}

async fn next_task(State(svc): Shared, Path(id): Path<String>) -> Result<Json<TaskPayload>, ServiceError> {
    svc.next_task(&id).map(Json)
}

#[derive(Debug, Deserialize)]
struct ChoiceBody {
    profile_index: usize,
}

async fn record_choice(
    State(svc): Shared,
    Path((id, n)): Path<(String, String)>,
    body: Result<Json<ChoiceBody>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<ChoiceAck>, ServiceError> {
    let n: usize = n
        .parse()
        .map_err(|_| ServiceError::unprocessable(format!("task number {n:?} is not a positive integer")))?;
    let Json(body) = body.map_err(|e| ServiceError::unprocessable(e.body_text()))?;
    svc.record_choice(&id, n, body.profile_index).map(Json)
}

#[derive(Debug, Deserialize)]
struct QuestionnaireBody {
    answers: IndexMap<String, serde_json::Value>,
}

async fn submit_questionnaire(
    State(svc): Shared,
    Path(id): Path<String>,
    body: Result<Json<QuestionnaireBody>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<QuestionnaireAck>, ServiceError> {
    let Json(body) = body.map_err(|e| ServiceError::unprocessable(e.body_text()))?;
    svc.submit_questionnaire(&id, &body.answers).map(Json)
}

async fn questionnaire(State(svc): Shared) -> Json<Vec<QuestionView>> {
    Json(svc.questionnaire())
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    status: Option<String>,
}

async fn export(State(svc): Shared, Query(q): Query<ExportQuery>) -> Result<impl IntoResponse, ServiceError> {
    match q.status.as_deref() {
        None | Some("complete") => {}
        Some(other) => {
            return Err(ServiceError::unprocessable(format!(
                "status {other:?} cannot be exported; only \"complete\" sessions form a dataset"
            )))
        }
    }
    let csv = svc.export_csv()?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv))
}
