use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },

    #[error("{file}:{line}: negative or zero weight {weight}")]
    BadWeight { file: String, line: usize, weight: f64 },

    #[error("group {group} lists unknown user id {user}")]
    DanglingMember { group: String, user: String },

    #[error("group-item interaction references unknown group {0}")]
    UnknownGroup(String),

    #[error("group {0} has no members")]
    EmptyGroup(String),

    #[error("node {0} has zero out-degree")]
    ZeroDegree(usize),

    #[error("graph has no nodes")]
    EmptyGraph,

    #[error("{measure} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { measure: &'static str, iterations: usize, residual: f64 },

    #[error("embedding dimension {d} is not divisible by head count {h}")]
    HeadMismatch { d: usize, h: usize },

    #[error("bad model file: {0}")]
    Format(String),

    #[error("unsupported model file version {0}")]
    Version(u32),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("distribution has no mass")]
    EmptyDistribution,

    #[error("smoothing constant must be positive, got {0}")]
    InvalidGamma(f64),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite value in {block} after iteration {iteration}")]
    NonFinite { block: &'static str, iteration: usize },

    #[error("{path}: {source}")]
    File { path: String, source: io::Error },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for errors caused by numerical failure rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::NoConvergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
