use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use bvmdesign_core::oc::FieldError;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),

    #[error("{0}")]
    NotFound(String),

    #[error("invalid request")]
    Unprocessable(Vec<FieldError>),

    /// The engine failed on valid input.
    #[error("{0}")]
    Numerical(String),

    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn field(field: &str, message: impl Into<String>) -> Self {
        ApiError::Unprocessable(vec![FieldError {
            field: field.into(),
            message: message.into(),
        }])
    }

    pub(crate) fn bad_request(e: bvmdesign_core::Error) -> Self {
        ApiError::BadRequest(e.to_string())
    }

    pub(crate) fn from_core(e: bvmdesign_core::Error) -> Self {
        if e.is_numerical() {
            ApiError::Numerical(e.to_string())
        } else {
            ApiError::field("", e.to_string())
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Numerical(_) | ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = match &self {
            ApiError::Unprocessable(errors) => json!({ "error": self.to_string(), "errors": errors }),
            other => json!({ "error": other.to_string() }),
        };
        (self.status(), Json(body)).into_response()
    }
}
