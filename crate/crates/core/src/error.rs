use crate::lattice::QvMode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("quadratic variation mode mismatch: {left:?} combined with {right:?}")]
    QvModeMismatch { left: QvMode, right: QvMode },

    #[error("{0:?} quadratic variation cannot be computed on this filtration")]
    QvModeUnsupported(QvMode),

    #[error("argument outside the domain: {0}")]
    Domain(String),

    #[error("inadmissible control: {0}")]
    Inadmissible(String),

    #[error("one-period arbitrage at node {node}: returns do not take both signs")]
    Arbitrage { node: usize },

    #[error("tree too large: {0}")]
    TreeTooLarge(String),

    #[error("perturbation bound violated: {0}")]
    PerturbationBound(String),

    #[error("solver did not converge: {0}")]
    Solver(String),

    #[error("precondition not met: {0}")]
    Precondition(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
