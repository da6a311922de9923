use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent hyperparameters or mismatched widths.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed graph, mesh or parameter structure.
    #[error("structural error: {0}")]
    Structure(String),

    #[error("degenerate element {element}: signed measure {measure:e}")]
    DegenerateElement { element: usize, measure: f64 },

    #[error("inverted element {element}: jacobian {jacobian:e}")]
    InvertedElement { element: usize, jacobian: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short category name used by the CLI when reporting failures.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Structure(_) => "structure",
            Error::DegenerateElement { .. } | Error::InvertedElement { .. } => "mesh",
            Error::Numerical(_) => "numerical",
            Error::Format(_) | Error::Json(_) => "format",
            Error::Io(_) => "io",
        }
    }
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn structure_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Structure(msg.into()))
}
