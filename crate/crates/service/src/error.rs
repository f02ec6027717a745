use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    NotFound(String),
    #[error("{message}")]
    Conflict {
        message: String,
        /// Where the client should go instead, if anywhere.
        next: Option<String>,
    },
    #[error("{message}")]
    Unprocessable {
        message: String,
        /// Offending questionnaire item id.
        question: Option<String>,
    },
    #[error("event store unavailable: {0}")]
    Unavailable(String),
    #[error("corrupt event log at line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn conflict(message: impl Into<String>) -> Self {
        Self::Conflict {
            message: message.into(),
            next: None,
        }
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self::Unprocessable {
            message: message.into(),
            question: None,
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            Self::NotFound(_) => StatusCode::NOT_FOUND,
            Self::Conflict { .. } => StatusCode::CONFLICT,
            Self::Unprocessable { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Self::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            Self::CorruptLog { .. } | Self::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn category(&self) -> &'static str {
        match self {
            Self::NotFound(_) => "not_found",
            Self::Conflict { .. } => "conflict",
            Self::Unprocessable { .. } => "invalid",
            Self::Unavailable(_) => "unavailable",
            Self::CorruptLog { .. } => "corrupt_log",
            Self::Internal(_) => "internal",
        }
    }
}

/// JSON error body.
#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub next: Option<String>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (question, next) = match &self {
            Self::Conflict { next, .. } => (None, next.clone()),
            Self::Unprocessable { question, .. } => (question.clone(), None),
            _ => (None, None),
        };
        let body = ErrorBody {
            error: self.category(),
            message: self.to_string(),
            question,
            next,
        };
        (self.status(), Json(body)).into_response()
    }
}
