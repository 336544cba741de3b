use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("thinned point y~_{index} = {position} does not align with the grid (offset {offset} cells)")]
    Alignment {
        index: usize,
        position: f64,
        offset: f64,
    },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("optimizer did not converge after {evals} evaluations (best value {best_value:e})")]
    Convergence {
        evals: usize,
        best_point: Vec<f64>,
        best_value: f64,
    },

    #[error("quadrature did not reach tolerance (achieved {achieved:e}, requested {requested:e})")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("unsupported dataset format version {found} (this build reads up to {supported})")]
    Version { found: u16, supported: u16 },

    #[error("dataset checksum mismatch (stored {stored:016x}, computed {computed:016x})")]
    Checksum { stored: u64, computed: u64 },

    #[error("malformed dataset: {0}")]
    Format(String),

    #[error("too many failed replications: {failed} of {total}")]
    Replications { failed: usize, total: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter(msg()))
    }
}
