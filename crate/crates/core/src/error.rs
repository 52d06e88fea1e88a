use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    /// Transport-level failure that survived all retries. The slot can be
    /// re-run by resuming the stage.
    #[error("transient endpoint failure: {0}")]
    Transient(String),

    /// Authentication or other non-retryable endpoint failure.
    #[error("endpoint rejected request: {0}")]
    Fatal(String),

    #[error("no decision line found in model output")]
    Parse { raw: String },

    #[error("arbitration failed: {0}")]
    Arbitration(Box<Error>),

    #[error("outcomes are degenerate: {0}")]
    Degenerate(String),

    #[error("separation detected: coefficient for '{predictor}' diverged (|beta| = {magnitude:.2}); supply a ridge penalty to fit anyway")]
    Separation { predictor: String, magnitude: f64 },

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("fit did not converge: {0}")]
    NotConverged(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("missing {what} in {}: {hint}", path.display())]
    MissingInput {
        what: String,
        path: PathBuf,
        hint: String,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("invalid TOML: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("cannot serialize TOML: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical core (separation, rank, convergence).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Degenerate(_)
                | Error::Separation { .. }
                | Error::RankDeficient(_)
                | Error::NotConverged(_)
        )
    }
}
