use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("section vector vanishes at point {point}")]
    ZeroSection { point: usize },

    #[error("degenerate embedding: metric is not positive at point {point} (min eigenvalue {value:e})")]
    Degenerate { point: usize, value: f64 },

    #[error("potential is not Kähler: form is not positive at point {point} (min eigenvalue {value:e})")]
    NotKahler { point: usize, value: f64 },

    #[error("ill-conditioned inner product: condition number {0:e} exceeds 1e12")]
    Conditioning(f64),

    #[error("matrix is not positive definite")]
    NotPositive,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("rank-deficient basis: {0}")]
    RankDeficient(String),

    #[error("t-range guard: |t|·‖A‖_op = {0:.3} exceeds 5")]
    RangeGuard(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
