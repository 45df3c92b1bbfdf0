use thiserror::Error;

use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{protocol} payload of {len} bytes exceeds maximum of {max}")]
    PayloadTooLarge {
        protocol: &'static str,
        len: usize,
        max: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("integration window [{t0}, {t1}] outside trace coverage [{start}, {end}]")]
    WindowOutsideTrace {
        t0: SimTime,
        t1: SimTime,
        start: SimTime,
        end: SimTime,
    },

    #[error("queue full (depth {depth})")]
    QueueFull { depth: usize },

    #[error("link not connected")]
    NotConnected,

    #[error("rejected configuration: {0}")]
    RejectedConfiguration(String),

    #[error("fit needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("degenerate fit: x has zero variance")]
    DegenerateFit,

    #[error("unknown experiment '{0}'")]
    UnknownExperiment(String),

    #[error("csv schema mismatch, missing columns: {}", .0.join(", "))]
    SchemaMismatch(Vec<String>),

    #[error("calibration failed: worst anchor '{anchor}' residual {residual:.4} > tolerance {tolerance:.4}")]
    CalibrationFailed {
        anchor: String,
        residual: f64,
        tolerance: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
