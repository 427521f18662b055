use std::fmt;

use crate::grid::Cell;
use crate::search::TraceEntry;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure reported by an embedding or confidence backend.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("invalid provider input: {0}")]
    InvalidInput(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("server returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Protocol(String),
    #[error("no recorded exchange for {endpoint} request")]
    NotRecorded { endpoint: String },
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cell ({row}, {col}) out of range for {rows}x{cols} grid")]
    Index {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("provider failure{}: {source}", CellSuffix(.cell))]
    Provider {
        cell: Option<Cell>,
        #[source]
        source: ProviderError,
    },
    #[error("search aborted after {} trace entries: {source}", .trace.len())]
    SearchAborted {
        #[source]
        source: Box<Error>,
        trace: Vec<TraceEntry>,
    },
    #[error("{failed} of {total} runs hit provider failures (limit 20%)")]
    FailureThreshold { failed: usize, total: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn provider(source: ProviderError) -> Self {
        Error::Provider { cell: None, source }
    }

    pub fn provider_at(cell: Cell, source: ProviderError) -> Self {
        Error::Provider {
            cell: Some(cell),
            source,
        }
    }
}

struct CellSuffix<'a>(&'a Option<Cell>);

impl fmt::Display for CellSuffix<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(cell) => write!(f, " at crop ({}, {})", cell.row, cell.col),
            None => Ok(()),
        }
    }
}
