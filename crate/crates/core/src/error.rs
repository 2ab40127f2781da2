use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("furniture not found: {0}")]
    FurnitureNotFound(String),

    #[error("catalog parse error at line {line}, column {column}: {message}")]
    CatalogParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),

    #[error("invalid initial configuration: {}", .0.join("; "))]
    InvalidInitialConfiguration(Vec<String>),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("no estimates")]
    NoEstimates,

    #[error("workspace too crowded after {0} attempts")]
    WorkspaceTooCrowded(usize),

    #[error("unknown skill index {index} for {furniture} (valid 1..={max})")]
    UnknownSkill {
        furniture: String,
        index: usize,
        max: usize,
    },

    #[error("image {width}x{height} is smaller than 224x224")]
    UndersizedImage { width: usize, height: usize },

    #[error("episode finished")]
    EpisodeFinished,

    #[error("environment not reset")]
    NotReset,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("episode validation failed: {0}")]
    EpisodeValidation(String),

    #[error("unsupported episode format version {0}")]
    UnsupportedVersion(u32),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
