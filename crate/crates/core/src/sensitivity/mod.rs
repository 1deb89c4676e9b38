//! Indirect utility of a proportional strategy under perturbations of the
//! returns, its first-order derivative and the finite-difference checks
//! that validate it.

mod checks;
mod fd;
mod formula;
mod indirect;
mod merton;

pub use checks::{
    continuity_check, monotonicity_check, near_optimality_gaps, sensitivity_mc, sensitivity_tree,
    supermartingale_residual, ContinuityReport, SensitivityReport, CONTINUITY_BAND,
};
pub use fd::{finite_difference_derivative, EpsGrid, FdEstimate};
pub use formula::{derivative_formula_mc, derivative_formula_tree, FormulaValues};
pub use indirect::{
    ensemble_wealth, indirect_utility_closed_form, indirect_utility_mc, indirect_utility_tree, tree_wealth,
    IndirectUtilityPoint,
};
pub use merton::Merton;
