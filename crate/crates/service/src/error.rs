use std::collections::BTreeMap;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use psmw_core::dataset::DatasetError;
use psmw_core::dsl::DslError;
use psmw_core::engine::EngineError;
use serde::Serialize;

use crate::json_response;

/// Error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub field_errors: BTreeMap<String, String>,
    /// Byte offset of a treatment expression syntax error.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), field_errors: BTreeMap::new(), offset: None }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn with_field(mut self, field: impl Into<String>, message: impl Into<String>) -> Self {
        self.field_errors.insert(field.into(), message.into());
        self
    }

    pub fn dataset(e: DatasetError) -> Self {
        let field = match &e {
            DatasetError::Schema(_) => "schema".to_string(),
            DatasetError::MissingColumn(c) => c.clone(),
            DatasetError::MissingValue { column, .. }
            | DatasetError::Unparseable { column, .. }
            | DatasetError::UnknownCategory { column, .. }
            | DatasetError::NotBinary { column, .. } => column.clone(),
            DatasetError::TreatmentNotBinary { .. } | DatasetError::TreatmentOneSided(_) => "treatment".to_string(),
            DatasetError::DuplicateUnit(_) => "unit_id".to_string(),
            DatasetError::NonFiniteOutcome { .. } => "outcome".to_string(),
            _ => "data".to_string(),
        };
        let msg = e.to_string();
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_dataset", msg.clone()).with_field(field, msg)
    }

    pub fn dsl(e: DslError) -> Self {
        let msg = e.to_string();
        let mut err = Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_expression", msg.clone())
            .with_field("expression", msg);
        err.offset = e.offset();
        err
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let msg = e.to_string();
        match e {
            EngineError::NotFound(_) => Self::not_found(msg),
            EngineError::Conflict(_) => Self::new(StatusCode::CONFLICT, "conflict", msg),
            EngineError::Invalid(m) => ApiError {
                field_errors: m.field_errors,
                ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_manifest", msg)
            },
            EngineError::RunFailed { stage, .. } => {
                let mut err = Self::new(StatusCode::CONFLICT, "run_failed", msg);
                if let Some(stage) = stage {
                    err = err.with_field("stage", stage.as_str());
                }
                err
            }
            EngineError::Io(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "storage_error", msg),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_response(self.status, &self)
    }
}
