use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("connection matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("connection matrix is not symmetric at ({i}, {j}): {a} vs {b}")]
    Asymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("connection matrix row {row} sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },
    #[error("connection matrix has negative entry {value} at ({i}, {j})")]
    NegativeEntry { i: usize, j: usize, value: f64 },
    #[error("connection matrix has non-positive diagonal entry at {i}")]
    ZeroDiagonal { i: usize },
    #[error("connection graph is not connected: spectral gap rho = {rho}")]
    NotConnected { rho: f64 },
    #[error("band of half-width {bandwidth} does not fit {k} clients (need K >= {need})")]
    BandTooWide { k: usize, bandwidth: usize, need: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("index {index} out of range 1..={max}")]
    OutOfRange { index: usize, max: usize },
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig})")]
    NotPsd { min_eig: f64 },
    #[error("matrix is singular")]
    Singular,
    #[error("sample is empty")]
    EmptySample,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
