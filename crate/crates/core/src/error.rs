use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measure grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("kernel is not flagged symmetric")]
    NotSymmetric,

    /// A kernel handed to the off-diagonal integral evaluator carries mass on a
    /// diagonal index tuple.
    #[error("kernel has diagonal support: entry {value:e} at atoms {atoms:?}")]
    DiagonalSupport { atoms: Vec<usize>, value: f64 },

    /// A square-root argument in a bound fell below the rounding floor.
    #[error("negative radicand {value:e} in `{term}`")]
    NegativeRadicand { term: String, value: f64 },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
