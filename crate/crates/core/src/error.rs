use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid field `{field}`: {reason}")]
    Ingestion { field: String, reason: String },
    #[error("cost is not differentiable at ramp 0 (b_abs = {b_abs}); subgradient in [{lo}, {hi}]")]
    Nondifferentiable { b_abs: f64, lo: f64, hi: f64 },
    #[error("transcription error: {0}")]
    Transcription(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("solver did not reach optimality: {0}")]
    NotOptimal(String),
    #[error("internal consistency error: {0}")]
    Consistency(String),
    #[error("refused: {0}")]
    Refused(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn field_err(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Ingestion {
        field: field.into(),
        reason: reason.into(),
    }
}
