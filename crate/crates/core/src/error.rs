use std::io;

use thiserror::Error;

use crate::llm::ClientError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid entity handle {0}")]
    InvalidEntity(u32),

    #[error("invalid relation handle {0}")]
    InvalidRelation(u32),

    #[error("unknown entity label {0:?}")]
    UnknownEntity(String),

    #[error("plan is not grounded in the graph; unknown relations: {}", .0.join(", "))]
    UngroundedPlan(Vec<String>),

    #[error("malformed plan text: {0}")]
    PlanSyntax(String),

    #[error("{0}")]
    Domain(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Client(#[from] ClientError),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for failures that come from talking to a model endpoint.
    pub fn is_transport(&self) -> bool {
        matches!(self, Error::Client(_))
    }
}
