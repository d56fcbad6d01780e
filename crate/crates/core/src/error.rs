use std::path::PathBuf;

/// Errors raised anywhere in the lab.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },
    #[error("stale or mismatched forward cache: {0}")]
    Cache(String),
    #[error("non-finite value: {0}")]
    Numeric(String),
    #[error("loss function is not deterministic: {first} != {second}")]
    Determinism { first: f64, second: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid proposal: {0}")]
    Proposal(String),
    #[error("negative pool too small: {0}")]
    Pool(String),
    #[error("invalid augmentation policy: {0}")]
    Policy(String),
    #[error("invalid missing-modality mask: {0}")]
    Mask(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("training diverged at step {step}: {reason}")]
    Training { step: usize, reason: String },
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("corrupt file {path}: {reason}")]
    Corruption { path: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
