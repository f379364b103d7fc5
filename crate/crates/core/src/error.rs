use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error(
        "second-order gradient requested through a ReLU; rebuild the forward pass in softplus-swap mode"
    )]
    SecondOrderThroughRelu,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("network is not trained: {0}")]
    NotTrained(String),

    #[error("non-finite loss {value} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },

    #[error("encoder required for encoder-approx gradient mode")]
    MissingEncoder,

    #[error("metric tensor is singular at z = {0:?}")]
    SingularMetric(Vec<f64>),

    #[error("corrupt {format} file: {reason}")]
    Corrupt { format: &'static str, reason: String },

    #[error("unsupported {format} format version {found}, expected {expected}")]
    FormatVersion {
        format: &'static str,
        found: String,
        expected: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
