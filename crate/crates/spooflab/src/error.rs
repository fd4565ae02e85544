//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    /// Invalid configuration value or unparseable config file.
    #[error("config error: {0}")]
    Config(String),

    /// A numerical operation failed (singular matrix, non-finite value, ...).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Estimator state became non-finite or covariance lost positive definiteness.
    #[error("estimator diverged: {0}")]
    EstimatorDiverged(String),

    /// Not enough data to perform an operation (calibration, fitting, training).
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A fit degenerated and could not be recovered by re-initialization.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// Persisted artifact has an unknown or incompatible schema version.
    #[error("schema mismatch: expected version {expected}, found {found}")]
    SchemaMismatch { expected: u32, found: u32 },

    /// Artifact was produced under a different estimator/noise configuration.
    #[error("config hash mismatch: artifact built for {artifact}, run uses {current} (pass --force to override)")]
    ConfigHashMismatch { artifact: String, current: String },

    /// Malformed persisted artifact (snapshot log, model bundle, thresholds, ...).
    #[error("malformed artifact: {0}")]
    MalformedArtifact(String),

    /// Training failed to make progress (e.g. fine-tune iteration cap exceeded everywhere).
    #[error("training failed: {0}")]
    TrainingFailed(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: config errors exit 2, runtime aborts exit 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}
