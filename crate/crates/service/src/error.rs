use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use modpipe_core::audit::AuditError;
use modpipe_core::log::LogError;
use modpipe_core::pipeline::PipelineError;
use serde::Serialize;
use thiserror::Error;

use crate::reviews::ReviewError;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Unauthorized(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("storage unavailable: {0}")]
    Unavailable(String),
    #[error("{0}")]
    Internal(String),
}

#[derive(Serialize)]
struct Body<'a> {
    error: &'a str,
    message: String,
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Unauthorized(_) => StatusCode::UNAUTHORIZED,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            ApiError::BadRequest(_) => "bad_request",
            ApiError::Unauthorized(_) => "unauthorized",
            ApiError::NotFound(_) => "not_found",
            ApiError::Conflict(_) => "conflict",
            ApiError::Unavailable(_) => "unavailable",
            ApiError::Internal(_) => "internal",
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Body {
            error: self.code(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        match e {
            ReviewError::UnknownTask(_) => ApiError::NotFound(e.to_string()),
            ReviewError::Closed { .. } | ReviewError::Duplicate { .. } => {
                ApiError::Conflict(e.to_string())
            }
            ReviewError::UnknownVerifier(_) | ReviewError::BadSignature(_) => {
                ApiError::Unauthorized(e.to_string())
            }
            ReviewError::ContentMismatch { .. } => ApiError::BadRequest(e.to_string()),
            ReviewError::Storage(_) => ApiError::Unavailable(e.to_string()),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::ConfigInvalid(_) => ApiError::BadRequest(e.to_string()),
            PipelineError::Storage(_) => ApiError::Unavailable(e.to_string()),
            PipelineError::UnknownContent(_) => ApiError::NotFound(e.to_string()),
        }
    }
}

impl From<LogError> for ApiError {
    fn from(e: LogError) -> Self {
        ApiError::Unavailable(e.to_string())
    }
}

impl From<AuditError> for ApiError {
    fn from(e: AuditError) -> Self {
        ApiError::BadRequest(e.to_string())
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::Unavailable(e.to_string())
    }
}
