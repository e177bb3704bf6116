//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("IMU window timestamps are not strictly increasing (index {index})")]
    NonMonotonicTimestamps { index: usize },
    #[error("IMU window covers [{have_start}, {have_end}] s but the scan needs [{need_start}, {need_end}] s")]
    WindowTooShort {
        have_start: f64,
        have_end: f64,
        need_start: f64,
        need_end: f64,
    },
    #[error("point timestamp {t} s outside the timeline span [{start}, {end}] s")]
    TimestampOutOfRange { t: f64, start: f64, end: f64 },
    #[error("vibration intensity needs at least 2 velocity samples, got {got}")]
    InsufficientSamples { got: usize },
    #[error("measurement covariance undefined for a zero-range point")]
    ZeroRangePoint,
    #[error("nearest-neighbor query on an empty map")]
    EmptyMap,
    #[error("point covariance is singular even after flooring")]
    SingularCovariance,
    #[error("plane fit neighbors are rank-deficient (scatter rank < 2)")]
    DegenerateNeighbors,
    #[error("observation built from an invalid plane match")]
    InvalidMatch,
    #[error("only {got} valid plane matches (need at least {need}); scan skipped")]
    NoValidMatches { got: usize, need: usize },
    #[error("time {t} s outside the profile duration [0, {duration}] s")]
    OutOfDuration { t: f64, duration: f64 },
    #[error("trajectory does not cover the requested settle window of {window} s")]
    WindowUncovered { window: f64 },
    #[error("trajectories share no timestamps within the association tolerance")]
    NoOverlap,
    #[error("config error: {0}")]
    Config(String),
    #[error("data format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
