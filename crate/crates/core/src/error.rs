use thiserror::Error;

use crate::gateway::GatewayError;
use crate::model::ModelError;

/// Errors raised while refining, planning, or searching.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("agent reply has an empty `{0}`")]
    EmptyField(String),
    #[error("prompt frame is missing section {0:?}")]
    MissingSection(String),
    #[error("role designer produced no roles")]
    NoRoles,
    #[error("duplicate role name {0:?}")]
    DuplicateRole(String),
    #[error("workflow search produced no output")]
    NoOutput,
    #[error("planner stopped before any subtask completed")]
    NoAnswer,
    #[error("invalid value: {0}")]
    Validation(String),
    #[error("trace: {0}")]
    Trace(String),
}

impl From<ModelError> for EngineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::EmptyField(f) => EngineError::EmptyField(f.to_string()),
            other => EngineError::Validation(other.to_string()),
        }
    }
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;
