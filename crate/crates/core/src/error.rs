use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("SVD did not converge within {0} sweeps")]
    NonConvergence(usize),

    /// `index` is the zero-based position of the first singular value that fell
    /// below the relative tolerance.
    #[error("matrix is rank deficient: sigma[{index}] = {value:e} relative to sigma[0] = {largest:e}")]
    RankDeficient { index: usize, value: f64, largest: f64 },

    #[error("sketched design has numeric rank {rank} < {cols} columns")]
    SingularSketch { rank: usize, cols: usize },

    #[error("leverage sampling requires a source matrix")]
    MissingSource,

    #[error("row {0} was streamed more than once")]
    DuplicateRow(usize),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot draw {j} disjoint blocks of {m} rows from {n} rows")]
    PartitionImpossible { n: usize, m: usize, j: usize },

    #[error("all {0} sketches were singular")]
    AllSketchesSingular(usize),

    #[error("pooled t statistics have zero spread")]
    DegenerateSpread,

    #[error("restriction covariance R V R' is singular")]
    SingularRestriction,

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("materializing the operator needs {entries} entries (cap {cap})")]
    TooLarge { entries: usize, cap: usize },

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("non-numeric value {value:?} at row {row}, column {col}")]
    NonNumeric { row: usize, col: usize, value: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
