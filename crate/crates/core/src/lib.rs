//! Numerical laboratory for the dual characterization and the first-order
//! stability of the indirect-utility process.
//!
//! The crate is organized bottom-up:
//!
//! * [`lattice`]: filtration trees, Gaussian path ensembles and the discrete
//!   stochastic calculus (integrals, quadratic variation, stochastic
//!   exponentials) shared by everything else.
//! * [`utility`]: Inada utility fields with closed-form conjugates.
//! * [`duality`]: exact primal/dual dynamic programming on small trees and the
//!   conjugacy, optimality and polarity certificates.
//! * [`perturbation`]: perturbed returns, the correction process, the tilted
//!   measure and the deflator/integrability probes.
//! * [`sensitivity`]: indirect utility under perturbations, the first-order
//!   derivative formula and its finite-difference validation.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod duality;
pub mod error;
pub mod lattice;
pub mod perturbation;
pub mod sensitivity;
pub mod stats;
pub mod utility;

pub use error::{Error, Result};
