use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("depth exhausted: multiplication needs level >= 1")]
    DepthExhausted,
    #[error("slot length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("empty rotation batch")]
    EmptyRotationBatch,
    #[error("useless bootstrap: target level {target} <= current level {level}")]
    UselessBootstrap { level: u32, target: u32 },
    #[error("{what} must be a power of two, got {value}")]
    NotPowerOfTwo { what: &'static str, value: usize },
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error("insufficient capacity: {needed} channels of {m}x{m} exceed shard capacity {capacity}")]
    InsufficientCapacity { needed: usize, m: usize, capacity: usize },
    #[error("kernel size must be odd, got {0}")]
    EvenKernel(usize),
    #[error("shift ({k}, {l}) too large for channel side {m}")]
    ShiftTooLarge { k: isize, l: isize, m: usize },
    #[error("wrong shard mode: {0}")]
    WrongMode(&'static str),
    #[error("input is not downsampled")]
    NotDownsampled,
    #[error("nothing to duplicate: shard is full")]
    NothingToDuplicate,
    #[error("kurtosis undefined: batch {batch} has zero variance")]
    KurtosisUndefined { batch: usize },
    #[error("insufficient level: need {need}, have {have}; bootstrap first")]
    InsufficientLevel { need: u32, have: u32 },
    #[error("activation input {value} outside [-{bound}, {bound}]")]
    OutOfDomain { value: f64, bound: f64 },
    #[error("value {value} exceeds cap {cap}")]
    CapExceeded { value: usize, cap: usize },
    #[error("no rotation key for amount {0}")]
    MissingKey(usize),
    #[error("level underflow at layer {index} ({layer}): need {need}, have {have}")]
    LevelUnderflow {
        index: usize,
        layer: String,
        need: u32,
        have: u32,
    },
    #[error("fixture {path}: {msg}")]
    Fixture { path: String, msg: String },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
