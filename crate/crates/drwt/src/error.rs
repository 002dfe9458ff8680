//! Crate-wide error type.

use crate::netgraph::SensorId;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{0} is not symmetric positive definite")]
    NotPositiveDefinite(&'static str),

    #[error("{0} is singular")]
    Singular(&'static str),

    #[error("window span mismatch in {context}: prior ends at {prior_last}, measurement at {meas_t}")]
    SpanMismatch {
        context: &'static str,
        prior_last: usize,
        meas_t: usize,
    },

    #[error("window too short: {0}")]
    WindowTooShort(&'static str),

    #[error("empty membership set")]
    EmptyMembership,

    #[error("edge ({0}, {1}) is not present in the communication graph")]
    UnknownEdge(SensorId, SensorId),

    #[error("vertex {0} is not present in the communication graph")]
    UnknownVertex(SensorId),

    #[error("relevant subgraph is disconnected at t={t} ({n_vertices} vertices)")]
    Disconnected { t: usize, n_vertices: usize },

    #[error("stale factorization: {0}")]
    StaleFactorization(&'static str),

    #[error("diagonal block {0} is indefinite during block-tridiagonal factorization")]
    IndefiniteBlock(usize),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
