use thiserror::Error;

use crate::rag_protocol::GenerationSet;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested Hellinger radius is larger than the bound allows.
    #[error("radius {rho} is infeasible: the largest feasible radius is {rho_max}")]
    Infeasible { rho: f64, rho_max: f64 },

    /// The retrieval decay factor is undefined at or beyond its singular radius.
    #[error("radius {rho} is at or beyond the decay-factor singularity at {rho_sing}")]
    Singular { rho: f64, rho_sing: f64 },

    /// A named precondition of a closed-form bound does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The graph update divides by zero (g[k][i] * g[i][k] == 1).
    #[error("degenerate graph: g[{k}][{i}] * g[{i}][{k}] == 1")]
    DegenerateGraph { k: usize, i: usize },

    /// Reject sampling hit its draw cap; the partial set is returned.
    #[error("generation saturated after {draws} draws with {} of the requested items", partial.items.len())]
    Saturated { partial: Box<GenerationSet>, draws: usize },

    /// Malformed input record.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
