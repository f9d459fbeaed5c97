use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sequence length must be at least 1")]
    EmptyLength,
    #[error("input is empty")]
    EmptyInput,
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("query position {position} out of range for length {length}")]
    IndexOutOfRange { position: usize, length: usize },
    #[error("invalid bucket table: {0}")]
    InvalidBucketTable(String),
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("token id {token} outside vocabulary of size {vocab}")]
    Vocabulary { token: u32, vocab: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("quadratic has no real root (discriminant {discriminant})")]
    NoRealRoot { discriminant: f64 },
    #[error("degenerate quadratic: leading coefficient A = {0} is not positive")]
    DegenerateCoefficient(f64),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
