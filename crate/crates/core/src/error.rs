use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Dimension mismatch. `layer` is the 1-based weighted-layer index when
    /// the mismatch is attributable to one layer.
    #[error("shape error{}: {message}", layer_suffix(*.layer))]
    Shape { layer: Option<usize>, message: String },

    #[error("invalid value: {0}")]
    Value(String),

    #[error("matrix is not positive semidefinite{}: min eigenvalue {min_eigenvalue:e} below tolerance {tolerance:e}", layer_suffix(*.layer))]
    NotPsd { layer: Option<usize>, min_eigenvalue: f64, tolerance: f64 },

    #[error("matrix is not symmetric: max |a_ij - a_ji| = {0:e}")]
    NotSymmetric(f64),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn layer_suffix(layer: Option<usize>) -> String {
    match layer {
        Some(l) => format!(" at layer {l}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn shape(message: impl Into<String>) -> Self {
        Error::Shape { layer: None, message: message.into() }
    }

    pub(crate) fn layer_shape(layer: usize, message: impl Into<String>) -> Self {
        Error::Shape { layer: Some(layer), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }

    /// Attach a layer index to a layer-less shape or PSD error.
    pub(crate) fn at_layer(self, layer: usize) -> Self {
        match self {
            Error::Shape { layer: None, message } => Error::Shape { layer: Some(layer), message },
            Error::NotPsd { layer: None, min_eigenvalue, tolerance } => {
                Error::NotPsd { layer: Some(layer), min_eigenvalue, tolerance }
            }
            other => other,
        }
    }
}
