//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by configuration, synthesis, recovery and estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid system config: {0}")]
    Config(String),

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("path delay {delay_s:.3e} s (+ distortion shift) outside the representable tap span [{min_s:.3e}, {max_s:.3e}] s")]
    DelayOutOfSpan {
        delay_s: f64,
        min_s: f64,
        max_s: f64,
    },

    #[error("tap set cannot be resolved from the active subcarriers (|L|={taps} > |K|={subcarriers}, or condition number {condition:.3e} above {limit:.1e})")]
    RankDeficient {
        taps: usize,
        subcarriers: usize,
        condition: f64,
        limit: f64,
    },

    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    ShapeMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("delay shift of {shift_taps} taps exceeds the ±{limit} tap guard")]
    ShiftOutOfRange { shift_taps: f64, limit: f64 },

    #[error("no detectable motion: max tap variance {max:.3e} below {ratio}x median {median:.3e}")]
    NoMotion { max: f64, median: f64, ratio: f64 },

    #[error("max-variance tap {tap} sits on the candidate range boundary [{lo}, {hi}]")]
    EdgeTap { tap: i32, lo: i32, hi: i32 },

    #[error("signal too short: {got_s:.2} s, need at least {need_s:.2} s")]
    TooShort { got_s: f64, need_s: f64 },

    #[error("no respiration detected: strongest in-band peak {prominence_db:.2} dB above median, below the {gate_db:.1} dB gate")]
    NoRespiration { prominence_db: f64, gate_db: f64 },

    #[error("negative relative delay {delay_s:.3e} s; upstream alignment invariant violated")]
    NegativeDelay { delay_s: f64 },

    #[error("no motion-free taps available for the noise floor and none supplied")]
    NoNoiseFloor,

    #[error("trace format: {0}")]
    TraceFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("scene file: {0}")]
    TomlParse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
