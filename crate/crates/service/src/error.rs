use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use ddmd_core::audio_io::AudioError;
use ddmd_core::pipeline::PipelineError;
use serde::Serialize;

/// An error response: status plus `{"error": ..., "upstream_status": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{status}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub upstream_status: Option<u16>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    upstream_status: Option<u16>,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), upstream_status: None }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn too_large(limit: u64) -> Self {
        Self::new(StatusCode::PAYLOAD_TOO_LARGE, format!("audio exceeds the {limit}-byte limit"))
    }

    pub fn unsupported(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, message)
    }

    pub fn no_model() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "no model loaded")
    }

    pub fn bad_gateway(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_GATEWAY, message)
    }

    pub fn upstream(status: u16) -> Self {
        ApiError {
            status: StatusCode::BAD_GATEWAY,
            message: format!("upstream returned HTTP {status}"),
            upstream_status: Some(status),
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match &e {
            PipelineError::Audio(AudioError::Io { .. }) => ApiError::internal(e.to_string()),
            PipelineError::Audio(AudioError::TranscoderUnavailable(_)) => ApiError::unsupported(e.to_string()),
            PipelineError::Audio(_) | PipelineError::Spectral(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
            }
            _ => ApiError::internal(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}", self.message);
        }
        let body = ErrorBody { error: &self.message, upstream_status: self.upstream_status };
        (self.status, Json(body)).into_response()
    }
}
