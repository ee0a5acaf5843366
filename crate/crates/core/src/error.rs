use thiserror::Error;

use crate::graph::VertexId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vertex {0} is not part of the graph")]
    UnknownVertex(VertexId),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("capacity exceeded: {what} has {size} elements, cap is {cap}")]
    Capacity {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("action processes live on different scenario spaces")]
    SpaceMismatch,

    #[error("invalid scenario space: {0}")]
    InvalidSpace(String),

    #[error("invalid process: {0}")]
    InvalidProcess(String),

    #[error("action profile has no process for vertex {0}")]
    IncompleteProfile(VertexId),

    #[error("boundary action missing for vertex {0}")]
    IncompleteBoundary(VertexId),

    #[error("contraction violated: rho = {rho} >= 1")]
    ContractionViolation { rho: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
