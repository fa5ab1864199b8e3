use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("parameter vector was built for a different architecture")]
    ArchitectureMismatch,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("Cholesky factorization failed for a {dim}x{dim} Gram system with ridge {ridge}")]
    Cholesky { dim: usize, ridge: f64 },

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("non-numeric cell at row {row}, column `{column}`: {value:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("no usable rows in {0}")]
    NoUsableRows(PathBuf),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("manifest: {0}")]
    Manifest(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::DimensionMismatch { .. }
                | Error::ArchitectureMismatch
                | Error::EmptyInput(_)
                | Error::MissingColumn(_)
                | Error::NonNumeric { .. }
                | Error::NoUsableRows(_)
                | Error::Manifest(_)
        )
    }
}
