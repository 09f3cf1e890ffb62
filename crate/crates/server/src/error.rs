//! Error bodies of the form `{code, message, detail}`.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use flownet_core::ccc::CccError;
use flownet_core::decompose::DecomposeError;
use flownet_core::ewggm::EwggmError;
use flownet_core::glasso::GlassoError;
use flownet_core::panel::PanelError;
use flownet_core::preprocess::PreprocessError;
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code,
                message: message.into(),
                detail: Value::Null,
            },
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.body.detail = detail;
        self
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown dataset {id}"))
    }

    pub fn bad_parameter(name: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "bad_parameter", message).with_detail(json!({ "parameter": name }))
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<PanelError> for ApiError {
    fn from(e: PanelError) -> Self {
        let detail = match &e {
            PanelError::Parse { line, .. } | PanelError::Duplicate { line, .. } => json!({ "line": line }),
            _ => Value::Null,
        };
        match e {
            PanelError::Io(_) => ApiError::internal(e.to_string()),
            _ => ApiError::new(StatusCode::BAD_REQUEST, "invalid_csv", e.to_string()).with_detail(detail),
        }
    }
}

impl From<PreprocessError> for ApiError {
    fn from(e: PreprocessError) -> Self {
        let code = match e {
            PreprocessError::Domain { .. } | PreprocessError::NonPositive(_) => "domain",
            PreprocessError::InvalidGamma(_) => "bad_parameter",
            PreprocessError::ZeroVariance { .. } => "degenerate_data",
            PreprocessError::SampleTooSmall { .. } => "too_few_periods",
        };
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, e.to_string())
    }
}

fn glasso_error(e: &GlassoError, window: Option<usize>) -> ApiError {
    let message = e.to_string();
    match e {
        GlassoError::Singular { rcond } => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "singular", message)
            .with_detail(json!({ "window": window, "rcond": rcond, "hint": "raise lambda above 0" })),
        GlassoError::Convergence {
            sweeps,
            kkt_residual,
            last_change,
        } => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "convergence", message).with_detail(json!({
            "window": window,
            "sweeps": sweeps,
            "kkt_residual": kkt_residual,
            "last_change": last_change,
        })),
        GlassoError::SampleTooSmall { .. } => {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "too_few_periods", message)
        }
        _ => ApiError::internal(message).with_detail(json!({ "window": window })),
    }
}

impl From<DecomposeError> for ApiError {
    fn from(e: DecomposeError) -> Self {
        match e {
            DecomposeError::Preprocess(p) => p.into(),
            DecomposeError::Ewggm(EwggmError::Window { window, source }) => glasso_error(&source, Some(window)),
            DecomposeError::Ewggm(EwggmError::Glasso(source)) => glasso_error(&source, None),
            DecomposeError::Ewggm(EwggmError::TooFewEvents(_)) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "degenerate_data", e.to_string())
            }
            DecomposeError::RankDeficient { .. } => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "rank_deficient", e.to_string())
            }
            DecomposeError::EventIndex { .. } => ApiError::internal(e.to_string()),
        }
    }
}

impl From<CccError> for ApiError {
    fn from(e: CccError) -> Self {
        match e {
            CccError::Preprocess(p) => p.into(),
            CccError::Alpha(_) | CccError::AlphaOne => ApiError::bad_parameter("alpha", e.to_string()),
            CccError::Convergence(iterations) => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "convergence", e.to_string())
                    .with_detail(json!({ "iterations": iterations }))
            }
            CccError::Shape(_) | CccError::Degenerate(_) | CccError::DegenerateDirection | CccError::Rank { .. } => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "degenerate_data", e.to_string())
            }
        }
    }
}
