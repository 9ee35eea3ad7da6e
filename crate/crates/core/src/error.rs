use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate matrix: rows are linearly dependent")]
    DegenerateMatrix,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("misuse: {0}")]
    Misuse(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unknown component `{0}`")]
    UnknownComponent(String),

    #[error("missing time step: sim `{sim}`, component `{component}`, t = {t}")]
    MissingStep { sim: String, component: String, t: usize },

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
