use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A non-finite value appeared. `index` is the offending row or iteration.
    #[error("non-finite value in {context} at index {index}")]
    Numeric { context: &'static str, index: usize },

    #[error("matrix is singular to working precision")]
    Singular,

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Failure inside a run, tagged with the iteration (or model id) it happened at.
    #[error("{label} {at}: {source}")]
    During {
        label: &'static str,
        at: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        got: impl ToString,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn at_iteration(self, at: usize) -> Self {
        Error::During {
            label: "iteration",
            at,
            source: Box::new(self),
        }
    }

    pub(crate) fn for_model(self, at: usize) -> Self {
        Error::During {
            label: "model",
            at,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping iteration / model tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::During { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
