use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate point set: {0}")]
    Degenerate(String),

    #[error("consistency loss needs at least two views, got {0}")]
    TooFewViews(usize),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(
        "point behind camera `{camera}` at frame {frame}, joint {joint} (depth {depth:.3} mm)"
    )]
    BehindCamera {
        camera: String,
        frame: usize,
        joint: usize,
        depth: f64,
    },

    #[error("missing labels: {0}")]
    MissingLabels(String),

    #[error("unsupported format version `{found}` (expected `{expected}`)")]
    Version { found: String, expected: String },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Degenerate(_) => "degenerate",
            Error::TooFewViews(_) => "too_few_views",
            Error::Invalid(_) => "invalid",
            Error::BehindCamera { .. } => "behind_camera",
            Error::MissingLabels(_) => "missing_labels",
            Error::Version { .. } => "version",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
