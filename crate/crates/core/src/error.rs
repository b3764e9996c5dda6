use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}x{expected}, got {got}x{got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index ({i},{j}) out of range for {n}x{n} matrix")]
    IndexOutOfRange { i: usize, j: usize, n: usize },
    #[error("departure from empty VOQ ({i},{j})")]
    DepartFromEmpty { i: usize, j: usize },
    #[error("queue counter overflow at ({i},{j})")]
    Overflow { i: usize, j: usize },
    #[error("invalid matching: {0}")]
    InvalidMatching(String),
    #[error("unknown traffic pattern: {0}")]
    UnknownPattern(String),
    #[error("port count must be >= 2, got {0}")]
    PortCountTooSmall(usize),
    #[error("offered load {0} outside (0, 1]")]
    LoadOutOfRange(f64),
    #[error("rate matrix not normalized: {0}")]
    NotNormalized(String),
    #[error("arrival rate {rate} > 1 at ({i},{j})")]
    RateAboveOne { rate: f64, i: usize, j: usize },
    #[error("invalid scheduler spec: {0}")]
    InvalidSchedulerSpec(String),
    #[error("invalid source spec: {0}")]
    InvalidSourceSpec(String),
    #[error("chain spec error: {0}")]
    ChainSpec(String),
    #[error("port count {0} too large for exact enumeration (max {1})")]
    EnumerationTooLarge(usize, usize),
    #[error("bound undefined: {0}")]
    BoundUndefined(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("csv parse error: {0}")]
    CsvParse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
