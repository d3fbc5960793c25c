use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid bbox [{x0},{x1})x[{y0},{y1}) for a {width}x{height} grid")]
    InvalidBBox {
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
        width: usize,
        height: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("action id {0} is outside the vocabulary")]
    InvalidAction(usize),
    #[error("position {0} is an observation and has no log-probability")]
    ObservationPosition(usize),
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),
    #[error("critic rollout ended without a score token")]
    NoScore,
    #[error("checkpoint layout version {found} does not match {expected}")]
    LayoutVersion { expected: u32, found: u32 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite objective at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("serialization: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
