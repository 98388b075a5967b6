use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    Shape {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("matrix is not symmetric: |a_ij - a_ji| = {deviation:e} exceeds {tolerance:e}")]
    NotSymmetric { deviation: f64, tolerance: f64 },

    #[error("singular system: smallest eigenvalue magnitude {eigenvalue:e}")]
    Singular { eigenvalue: f64 },

    #[error("eigendecomposition failed to converge")]
    Decomposition,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("label {label} at row {row} is out of range for {class_count} classes")]
    Encoding {
        row: usize,
        label: usize,
        class_count: usize,
    },

    #[error("response contains NaN at index {index}")]
    InvalidResponse { index: usize },

    #[error("negative entry {value} at ({row}, {col}); power regularization needs non-negative input")]
    Domain { row: usize, col: usize, value: f64 },

    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("theorem precondition violated: {0}")]
    Precondition(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("parse error in {path} line {line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("inconsistent dataset: {0}")]
    Consistency(String),

    #[error("model container: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn shape(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn at_layer(self, layer: usize) -> Self {
        Error::Layer {
            layer,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
