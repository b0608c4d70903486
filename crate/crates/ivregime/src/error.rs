use thiserror::Error;

/// One problem found while validating raw cohort rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationIssue {
    /// Offending row (0-based), or `None` for dataset-level problems.
    pub row: Option<usize>,
    pub field: &'static str,
    pub message: String,
}

impl std::fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.row {
            Some(r) => write!(f, "row {}: field `{}`: {}", r, self.field, self.message),
            None => write!(f, "dataset: field `{}`: {}", self.field, self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("validation failed with {} issue(s); first: {}", .0.len(), .0[0])]
    Validation(Vec<ValidationIssue>),

    #[error("perfect separation suspected: {0}")]
    Separation(String),

    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    #[error("degenerate estimate: every product-limit factor was skipped")]
    DegenerateEstimate,

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("censoring calibration failed: {0}")]
    Calibration(String),

    #[error("csv error at {path}: {message}")]
    Csv { path: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Stable machine-readable tag used in the CLI error block.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Validation(_) => "validation",
            Error::Separation(_) => "separation",
            Error::NonConvergence(_) => "non-convergence",
            Error::DegenerateEstimate => "degenerate-estimate",
            Error::Configuration(_) => "configuration",
            Error::Optimization(_) => "optimization",
            Error::Calibration(_) => "calibration",
            Error::Csv { .. } => "csv",
            Error::Io(_) => "io",
        }
    }
}
