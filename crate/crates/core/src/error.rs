use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("rank error: {0}")]
    Rank(String),
    #[error("unbound input: {0}")]
    UnboundInput(String),
    #[error("gradient error: {0}")]
    Grad(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown answer id {0}")]
    Vocabulary(usize),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable short name used in machine-readable error objects.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Rank(_) => "rank",
            Error::UnboundInput(_) => "unbound_input",
            Error::Grad(_) => "gradient",
            Error::Config(_) => "config",
            Error::Vocabulary(_) => "vocabulary",
            Error::Alignment(_) => "alignment",
            Error::EmptyInput(_) => "empty_input",
            Error::NonFinite(_) => "non_finite",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
