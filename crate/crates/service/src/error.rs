use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use dirtree_audit::{AuditError, BallotError, TreeError};
use serde_json::json;

/// An error response: `{"error": {"code": ..., "message": ...}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid-request", message)
    }

    pub fn unprocessable(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not-found", format!("no session {id}"))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

impl From<BallotError> for ApiError {
    fn from(e: BallotError) -> Self {
        ApiError::unprocessable("invalid-ballot", e.to_string())
    }
}

impl From<TreeError> for ApiError {
    fn from(e: TreeError) -> Self {
        match e {
            TreeError::EmptyBootstrap => {
                ApiError::new(StatusCode::CONFLICT, "empty-bootstrap", e.to_string())
            }
            TreeError::InvalidA0(_) | TreeError::NoMatchingA0(_) | TreeError::ZeroA0Variance => {
                ApiError::unprocessable("invalid-prior", e.to_string())
            }
            _ => ApiError::unprocessable("invalid-ballot", e.to_string()),
        }
    }
}

impl From<AuditError> for ApiError {
    fn from(e: AuditError) -> Self {
        let msg = e.to_string();
        match e {
            AuditError::NotInProgress(_) => ApiError::new(StatusCode::CONFLICT, "not-in-progress", msg),
            AuditError::EmptyBootstrap => ApiError::new(StatusCode::CONFLICT, "empty-bootstrap", msg),
            AuditError::Overflow { .. } => ApiError::unprocessable("exceeds-total", msg),
            AuditError::Tree(t) => t.into(),
            AuditError::Tally(_) | AuditError::EmptyHistory => ApiError::internal(msg),
            AuditError::InvalidThreshold(_)
            | AuditError::ZeroDraws
            | AuditError::ZeroBallots
            | AuditError::UnknownWinner(_) => ApiError::unprocessable("invalid-config", msg),
        }
    }
}
