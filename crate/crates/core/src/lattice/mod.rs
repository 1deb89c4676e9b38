//! Finite filtrations, path ensembles and discrete stochastic calculus.
//!
//! Every process lives on a [`Filtration`]: a set of states ordered so that
//! each parent precedes its children. A [`FiltrationTree`] is the general
//! finite case; a [`PathChain`] is the degenerate one-child-per-state chain
//! used for a single simulated path.

mod calculus;
mod ensemble;
mod grid;
mod market;
pub mod samples;
mod tree;
pub mod treefile;

pub use calculus::{
    base_return, base_return_with_qv, native_mode, quadratic_variation, stochastic_exponential,
    stochastic_exponential_with_qv, stochastic_integral, AdaptedProcess, ExpVariant, PredictableControl,
    QuadraticVariation, QvMode,
};
pub use ensemble::{BrownianModel, PathEnsemble};
pub use grid::TimeGrid;
pub use market::{MarketModel, TreeMarket};
pub use tree::{Filtration, FiltrationTree, PathChain, TreeBuilder};

/// Absolute tolerance for the martingale property of tree drivers.
pub const MARTINGALE_TOL: f64 = 1e-12;
