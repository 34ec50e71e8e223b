use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt data: {0}")]
    CorruptData(String),

    #[error("image {width}x{height} is smaller than the {grid_cols}x{grid_rows} tile grid")]
    ImageTooSmall {
        width: usize,
        height: usize,
        grid_cols: usize,
        grid_rows: usize,
    },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("mask has no set pixels")]
    EmptyMask,

    #[error("box {0} lies outside the image")]
    OutOfBounds(String),

    #[error("schema mismatch in {file}: {message}")]
    SchemaMismatch { file: String, message: String },

    #[error("duplicate record id {0}")]
    DuplicateRecordId(String),

    #[error("patient overlap between splits: {0}")]
    OverlapViolation(String),

    #[error("degenerate labels for {0}: need at least one positive and one negative")]
    DegenerateLabels(String),

    #[error("prediction set has no race scores")]
    MissingRaceScores,

    #[error("no (label, group) cell has at least two valid groups")]
    NoValidCells,

    #[error("no runs to report")]
    EmptyRunSet,

    #[error("duplicate run method={method} seed={seed} dataset={dataset}")]
    DuplicateRun { method: String, seed: i64, dataset: String },

    #[error("probe training needs at least two groups")]
    SingleGroup,

    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },

    #[error("output {0} already exists (use --force to overwrite)")]
    OutputExists(PathBuf),

    #[error("{failed} of {total} records failed, above the allowed rate {max_rate}")]
    FailureRate { failed: usize, total: usize, max_rate: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error class. Documented in `cxrprep --help`.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::FileNotFound(_) => 3,
            Error::UnsupportedFormat(_)
            | Error::CorruptData(_)
            | Error::SchemaMismatch { .. }
            | Error::Parse { .. } => 4,
            Error::OutputExists(_) => 5,
            Error::FailureRate { .. } => 6,
            Error::DuplicateRecordId(_)
            | Error::DegenerateLabels(_)
            | Error::MissingRaceScores
            | Error::NoValidCells
            | Error::EmptyRunSet
            | Error::DuplicateRun { .. }
            | Error::SingleGroup
            | Error::EmptyMask
            | Error::ImageTooSmall { .. }
            | Error::DimensionMismatch { .. }
            | Error::OutOfBounds(_) => 7,
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Io(_) => 8,
            Error::OverlapViolation(_) => 70,
        }
    }

    pub(crate) fn parse(file: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            message: message.into(),
        }
    }
}
