use thiserror::Error;

use crate::model::DeviceId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("device {0} is not in the edge-computing set")]
    NotInEdgeSet(DeviceId),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("chain index out of domain: zeta={zeta}, xi={xi}")]
    InvalidChainIndex { zeta: usize, xi: usize },

    #[error("linear solve residual {residual:e} exceeds bound {bound:e}")]
    SolverResidual { residual: f64, bound: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),
}

pub type Result<T> = std::result::Result<T, Error>;
