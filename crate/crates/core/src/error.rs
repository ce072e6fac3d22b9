use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("site at {r:.4} Å is closer than one bond length; contact hyperfine is not modelled")]
    TooClose { r: f64 },

    #[error("coincident positions for sites {0} and {1}")]
    CoincidentSites(usize, usize),

    #[error("cluster of {size} spins exceeds the dimension cap of {cap}")]
    Dimension { size: usize, cap: usize },

    #[error("site index {index} out of range for a bath of {len} sites")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("matrix is not Hermitian (relative deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("sequence '{name}' violates timing constraints: {reason}")]
    InvalidSequence { name: String, reason: String },

    #[error("timing quantization collapses events {0} and {1} onto the same instant")]
    QuantizationCollision(usize, usize),

    #[error("unsupported XY sequence length {0} (expected 4, 8, 16, 32 or 64)")]
    UnsupportedXy(usize),

    #[error("ideal-pulse propagation requested but event {0} has finite duration")]
    NonIdealPulse(usize),

    #[error("integration step {step} µs exceeds pulse duration {duration} µs")]
    StepTooLarge { step: f64, duration: f64 },

    #[error("bath file parse error at line {line}: {msg}")]
    BathFormat { line: usize, msg: String },
}
