use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sample rate mismatch: {path} has {found} Hz, expected {expected} Hz")]
    SampleRateMismatch {
        path: String,
        expected: u32,
        found: u32,
    },

    #[error("empty audio: {0}")]
    EmptyAudio(String),

    #[error("unsupported audio format in {path}: {reason}")]
    UnsupportedAudio { path: String, reason: String },

    #[error(
        "window out of bounds: [{start:.3}, {end:.3}) s not within session of {duration:.3} s"
    )]
    WindowOutOfBounds { start: f64, end: f64, duration: f64 },

    #[error("rank-deficient VAR for clip {clip}")]
    RankDeficientVar { clip: String },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("feature layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("need at least {needed} groups for {k}-fold split, found {found}")]
    InsufficientGroups {
        needed: usize,
        k: usize,
        found: usize,
    },

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("fold {fold}: {source}")]
    Fold { fold: usize, source: Box<Error> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    /// Failures of the numerics on well-formed input, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::RankDeficientVar { .. } | Error::SingleClass | Error::Numerical(_) => true,
            Error::Fold { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}
