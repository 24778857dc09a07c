//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Variants are grouped by
//! how the CLI maps them to exit codes: configuration and input problems,
//! numerical invariant violations, and I/O failures.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value is out of range or otherwise unusable.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Operand shapes do not line up.
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: (usize, usize),
        got: (usize, usize),
    },

    /// A NaN or infinity appeared where state must stay finite.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A matrix that must be symmetric is not.
    #[error("matrix is not symmetric: max |A - A'| entry is {max_dev:e}")]
    Asymmetric { max_dev: f64 },

    /// A row or column of a mixing matrix does not sum to one.
    #[error("{axis} {index} of the mixing matrix sums to {sum:.17}, expected 1")]
    NotStochastic {
        axis: &'static str,
        index: usize,
        sum: f64,
    },

    /// A mixing matrix carries weight between nodes that share no edge.
    #[error("nonzero weight {value:e} between non-adjacent nodes {i} and {j}")]
    OffEdgeWeight { i: usize, j: usize, value: f64 },

    /// The gossip topology has no usable spectral gap.
    #[error("mixing matrix has no spectral gap (rho = {rho:e}); the graph is disconnected or degenerate")]
    NoSpectralGap { rho: f64 },

    /// An experiment configuration failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// Reading or writing a file failed.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A JSON document could not be parsed or serialized.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 2 for bad configs or inputs,
    /// 3 for numerical invariant violations, 4 for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::ShapeMismatch { .. }
            | Error::Asymmetric { .. }
            | Error::NotStochastic { .. }
            | Error::OffEdgeWeight { .. }
            | Error::NoSpectralGap { .. }
            | Error::Config(_)
            | Error::Json(_) => 2,
            Error::NonFinite { .. } => 3,
            Error::Io { .. } => 4,
       }
    }
}
