use thiserror::Error;

/// Errors raised by the simulator and its analysis tools.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("graph is not strongly connected")]
    NotStronglyConnected,

    #[error("invalid edge {from} -> {to} for a graph with {n} nodes")]
    InvalidEdge { from: usize, to: usize, n: usize },

    #[error("spectral estimate did not converge: residual {last:e} at horizon vs {first:e} at k=1")]
    NonConvergence { first: f64, last: f64 },

    #[error("compression coefficient {omega_sq} is not below 1")]
    InadmissibleCompression { omega_sq: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("divergence at iteration {t}: node {node} has norm {norm:e}")]
    Divergence { t: usize, node: usize, norm: f64 },

    #[error("replica of node {owner} held by node {holder} diverged from the owner's estimate at iteration {t}")]
    ReplicaMismatch { t: usize, owner: usize, holder: usize },

    #[error("push-sum weight of node {node} is not positive ({y}) at iteration {t}")]
    NonPositiveWeight { t: usize, node: usize, y: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for errors caused by invalid user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::NotStronglyConnected
                | Error::InvalidEdge { .. }
                | Error::InadmissibleCompression { .. }
                | Error::Dimension { .. }
                | Error::Parse(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
