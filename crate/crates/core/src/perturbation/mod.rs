//! Perturbations of the return process and the objects that describe how
//! wealth responds to them.

mod correction;
mod decomposition;
mod deflator;
mod probe;
mod spec;
mod tilted;

pub use correction::{correction_process, CorrectionProcess};
pub use decomposition::{
    decomposition_terms, wealth_decomposition_check, ConvergencePoint, ConvergenceReport, DecompositionTerms,
    HALVING_BAND,
};
pub use deflator::{deflator_process, nupbr_deflator_ensemble, nupbr_deflator_tree, DeflatorPoint, DeflatorReport};
pub use probe::{integrability_probe, integrability_probe_tree, ProbePoint, ProbeReport};
pub use spec::{perturbed_market, perturbed_return, ConstantPerturbation, PerturbationSpec, Variant};
pub use tilted::{tilted_measure, TiltedMeasure, TILT_TOL};
