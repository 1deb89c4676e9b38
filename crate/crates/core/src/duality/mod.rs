//! Primal and dual problems on finite trees and the checks tying them
//! together.

mod certificate;
mod checks;
mod dual;
mod polytope;
mod primal;

pub use certificate::{fmt_num, Certificate};
pub use checks::*;
pub use dual::{solve_dual, DualSolution};
pub use polytope::NodePolytope;
pub use primal::{solve_primal, LineSearch, PrimalSolution};

/// Largest tree the exact solvers and their oracles accept.
pub const MAX_PERIODS: usize = 5;
pub const MAX_BRANCHING: usize = 3;
