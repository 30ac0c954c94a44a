use thiserror::Error;

/// Unified error type for the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or malformed config file.
    #[error("config: {0}")]
    Config(String),

    /// Geometry construction or validation failure.
    #[error("geometry: {0}")]
    Geometry(String),

    /// Echo synthesis failure (degenerate scene, trajectory gap, ...).
    #[error("simulation: {0}")]
    Simulation(String),

    /// Calibration observable extraction or estimation failure.
    #[error("calibration: {0}")]
    Calibration(String),

    /// Track filtering failure.
    #[error("tracking: {0}")]
    Tracking(String),

    /// Image formation failure.
    #[error("imaging: {0}")]
    Imaging(String),

    /// Image metric extraction failure.
    #[error("analysis: {0}")]
    Analysis(String),

    /// Malformed or truncated data file.
    #[error("data format: {0}")]
    DataFormat(String),

    /// Numerical failure (non-convergence, non-finite values).
    #[error("numerical: {0}")]
    Numerical(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
