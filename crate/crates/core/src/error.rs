use std::fmt;

/// Position in a model source file, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("syntax error at {pos}: {message}")]
    Syntax { pos: Pos, message: String },
    #[error("unknown latent `{name}` at {pos}")]
    UnknownLatent { name: String, pos: Pos },
    #[error("unknown item `{name}` at {pos}")]
    UnknownItem { name: String, pos: Pos },
    #[error("duplicate declaration of `{name}` at {pos}")]
    Duplicate { name: String, pos: Pos },
    #[error("cyclic latent graph through `{0}`")]
    Cycle(String),
    #[error("duplicate fixed-loading declaration for latent `{latent}` at {pos}")]
    DuplicateFixedLoading { latent: String, pos: Pos },
    #[error("invalid model: {0}")]
    Model(String),
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("truncated sampler exceeded {0} proposals")]
    RejectionLimit(usize),
    #[error("missing data column `{0}`")]
    MissingColumn(String),
    #[error("dataset has no rows")]
    EmptyData,
    #[error("invalid data: {0}")]
    Data(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("value {value} outside the support of `{name}`")]
    OutOfSupport { name: String, value: f64 },
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("initialization failed after {0} attempts")]
    Initialization(usize),
    #[error("simulation rejected: {0}")]
    Rejected(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("calibration aborted: {dropped} of {total} simulations dropped")]
    TooManyDropped { dropped: usize, total: usize },
    #[error("insufficient draws: need {needed}, have {have}")]
    InsufficientDraws { needed: usize, have: usize },
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
