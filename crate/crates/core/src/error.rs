use thiserror::Error;

use crate::amp::IterationRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("pilot column {column} has zero energy")]
    DegenerateColumn { column: usize },

    #[error("message passing diverged at iteration {iteration}{}: {reason}", subcarrier.map(|p| format!(" (subcarrier {p})")).unwrap_or_default())]
    Diverged { iteration: usize, subcarrier: Option<usize>, reason: String, trajectory: Vec<IterationRecord> },

    #[error("support of size {support} exceeds pilot length {pilot_len}")]
    SupportTooLarge { support: usize, pilot_len: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    ConfigParse(#[from] toml::de::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::DegenerateColumn { .. } => "degenerate_column",
            Error::Diverged { .. } => "diverged",
            Error::SupportTooLarge { .. } => "support_too_large",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::ConfigParse(_) => "config_parse",
        }
    }
}
