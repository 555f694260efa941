use thiserror::Error;

use crate::dse::DseError;
use crate::gp::{GpError, OptimizeAbort};
use crate::net::NetError;
use crate::quant::QuantError;
use crate::sim::SimError;
use crate::sparse::SparseError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Dse(#[from] DseError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Optimize(#[from] OptimizeAbort),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Input(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    /// Process exit status: 2 for bad input, 3 for an infeasible search,
    /// 4 for a failed verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dse(DseError::Infeasible(_) | DseError::InfeasibleSeed { .. } | DseError::NoMainCandidate { .. }) => 3,
            Error::Verification(_) => 4,
            _ => 2,
        }
    }
}
