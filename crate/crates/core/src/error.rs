use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("malformed row {row} in {path}: {reason}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("duplicate cell_id `{0}` in manifest")]
    DuplicateCell(String),

    #[error("unknown split label `{0}`")]
    UnknownSplit(String),

    #[error("cell {cell_id}: capacity never falls below {threshold_ah:.4} Ah (censored cell)")]
    CensoredCell { cell_id: String, threshold_ah: f64 },

    #[error("cell {cell_id}: cycle {cycle} unavailable (no substitute within ±2 cycles)")]
    MissingCycle { cell_id: String, cycle: u32 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("too few points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("baseline capacity {value:.3e} Ah at row {row} is below the division floor")]
    DivisionFloor { row: usize, value: f64 },

    #[error("invalid transform input: {0}")]
    Transform(String),

    #[error("design matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("elastic net did not converge after {iterations} sweeps (max change {max_change:.3e})")]
    NonConvergence { iterations: usize, max_change: f64 },

    #[error("n_components = {requested} exceeds rank {rank}")]
    TooManyComponents { requested: usize, rank: usize },

    #[error("degenerate deflation at component {component}: zero-norm weight vector")]
    DegenerateDeflation { component: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("cell {cell_id}: {source}")]
    Cell {
        cell_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("infeasible synthetic scenario: {0}")]
    InfeasibleScenario(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the id of the cell being processed.
    pub fn in_cell(self, cell_id: &str) -> Self {
        match self {
            e @ Error::Cell { .. } => e,
            e => Error::Cell {
                cell_id: cell_id.to_string(),
                source: Box::new(e),
            },
        }
    }
}
