use std::path::PathBuf;

use thiserror::Error;

use crate::estimation::FitResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of the operation (non-positive
    /// duration, empty settings list, out-of-range parameter, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate counts: expected {0}")]
    DegenerateCounts(String),

    #[error("correlation E undefined: all four counts are zero for {0}")]
    UndefinedE(String),

    #[error("zero count in cell {0}; the sqrt(N) error model needs N > 0")]
    ZeroCount(String),

    #[error("density is not normalized: integral = {integral}")]
    Normalization { integral: f64 },

    #[error("density is negative at lambda = {lambda_deg} deg")]
    NegativeDensity { lambda_deg: f64 },

    #[error("count table is missing cells: {}", format_cells(.0))]
    MissingCells(Vec<(f64, f64)>),

    #[error("count table has more than one record for cell ({0}, {1})")]
    DuplicateCell(f64, f64),

    #[error("count table has a record at ({0}, {1}) that is not on the CHSH grid")]
    UnexpectedCell(f64, f64),

    #[error("records have unequal durations ({0} s vs {1} s)")]
    UnequalDurations(f64, f64),

    #[error("insufficient scan span: {0}")]
    InsufficientSpan(String),

    #[error("fit did not converge after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        best: Box<FitResult>,
    },

    #[error("session is busy: a step is already in progress")]
    Busy,

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn format_cells(cells: &[(f64, f64)]) -> String {
    cells
        .iter()
        .map(|(a, b)| format!("({a}, {b})"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
