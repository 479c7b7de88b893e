use thiserror::Error;

/// Error type shared by every module in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors disagree on a dimension an operation needs to match.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    /// An attention mask left no position to attend to.
    #[error("degenerate mask: no unmasked position")]
    DegenerateMask,

    /// A scalar argument is outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The loss tensor was not produced on the tape asked to differentiate it.
    #[error("loss is not connected to this tape")]
    DisconnectedGraph,

    /// Configuration rejected before any work was done.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or incomplete input data.
    #[error("data error: {msg}")]
    Data { line: Option<usize>, msg: String },

    /// A numeric failure such as a NaN loss during training.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data {
            line: None,
            msg: msg.into(),
        }
    }

    pub fn data_at(line: usize, msg: impl Into<String>) -> Self {
        Error::Data {
            line: Some(line),
            msg: format!("line {line}: {}", msg.into()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
