//! Terminal utility fields and their convex conjugates.
//!
//! All families are homogeneous, so every conjugate is available in closed
//! form: for `U(x) = D x^{1−γ}/(1−γ)`,
//! `V(y) = D^{1/γ} γ/(1−γ) y^{(γ−1)/γ}` and `−V′(y) = (y/D)^{−1/γ}`;
//! for `U = log`, `V(y) = −log y − 1`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Utility field `U(T, ·)`. The weighted family carries one weight per tree
/// node; only the leaf entries are read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum UtilityField {
    Crra { gamma: f64 },
    Log,
    WeightedCrra { gamma: f64, weights: Vec<f64> },
}

/// Conjugate `V(T, y) = sup_{x>0} (U(T, x) − xy)` of a [`UtilityField`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateField {
    field: UtilityField,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0) || !gamma.is_finite() || gamma == 1.0 {
        return Err(Error::Domain(format!("risk aversion must be positive, finite and ≠ 1 (got {gamma})")));
    }
    Ok(())
}

impl UtilityField {
    pub fn crra(gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self::Crra { gamma })
    }

    pub fn weighted_crra(gamma: f64, weights: Vec<f64>) -> Result<Self> {
        check_gamma(gamma)?;
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::Domain(format!("weights must be finite and nonnegative (got {w})")));
        }
        Ok(Self::WeightedCrra { gamma, weights })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Crra { gamma } => check_gamma(*gamma),
            Self::Log => Ok(()),
            Self::WeightedCrra { gamma, weights } => Self::weighted_crra(*gamma, weights.clone()).map(|_| ()),
        }
    }

    /// Relative risk aversion; 1 for the logarithm.
    pub fn gamma(&self) -> f64 {
        match self {
            Self::Crra { gamma } | Self::WeightedCrra { gamma, .. } => *gamma,
            Self::Log => 1.0,
        }
    }

    pub fn is_log(&self) -> bool {
        matches!(self, Self::Log)
    }

    /// Weight `D` at `leaf`.
    pub fn weight(&self, leaf: usize) -> Result<f64> {
        match self {
            Self::WeightedCrra { weights, .. } => {
                let w =
                    *weights.get(leaf).ok_or_else(|| Error::Domain(format!("no utility weight for node {leaf}")))?;
                if !(w > 0.0) {
                    return Err(Error::Domain(format!("utility weight at node {leaf} is not positive")));
                }
                Ok(w)
            }
            _ => Ok(1.0),
        }
    }

    /// `U(T, x)`; at `x = 0` the right limit, which is `−∞` for the
    /// logarithm and for `γ > 1`.
    pub fn u_eval(&self, x: f64, leaf: usize) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::Domain(format!("utility evaluated at negative wealth {x}")));
        }
        let d = self.weight(leaf)?;
        Ok(match self {
            Self::Log => x.ln(),
            _ => {
                let g = self.gamma();
                d * x.powf(1.0 - g) / (1.0 - g)
            }
        })
    }

    /// `U′(T, x)`; `+∞` at zero.
    pub fn u_prime(&self, x: f64, leaf: usize) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::Domain(format!("marginal utility evaluated at negative wealth {x}")));
        }
        let d = self.weight(leaf)?;
        Ok(match self {
            Self::Log => 1.0 / x,
            _ => d * x.powf(-self.gamma()),
        })
    }

    /// `(U′)⁻¹(y) = −V′(T, y)`.
    pub fn inverse_marginal(&self, y: f64, leaf: usize) -> Result<f64> {
        self.conjugate().v_prime(y, leaf).map(|v| -v)
    }

    /// `U(T, 0)`.
    pub fn u_at_zero(&self) -> f64 {
        match self {
            Self::Log => f64::NEG_INFINITY,
            _ if self.gamma() > 1.0 => f64::NEG_INFINITY,
            _ => 0.0,
        }
    }

    /// `sup_x U(T, x)`: finite only for `γ > 1`.
    pub fn u_sup(&self) -> f64 {
        match self {
            Self::Log => f64::INFINITY,
            _ if self.gamma() > 1.0 => 0.0,
            _ => f64::INFINITY,
        }
    }

    pub fn conjugate(&self) -> ConjugateField {
        ConjugateField { field: self.clone() }
    }
}

impl ConjugateField {
    pub fn field(&self) -> &UtilityField {
        &self.field
    }

    /// `V(T, y)` for `y > 0`.
    pub fn v_eval(&self, y: f64, leaf: usize) -> Result<f64> {
        if !(y > 0.0) {
            return Err(Error::Domain(format!("conjugate evaluated at non-positive {y}")));
        }
        let d = self.field.weight(leaf)?;
        Ok(match &self.field {
            UtilityField::Log => -y.ln() - 1.0,
            f => {
                let g = f.gamma();
                d.powf(1.0 / g) * g / (1.0 - g) * y.powf((g - 1.0) / g)
            }
        })
    }

    /// `V′(T, y)` for `y > 0`.
    pub fn v_prime(&self, y: f64, leaf: usize) -> Result<f64> {
        if !(y > 0.0) {
            return Err(Error::Domain(format!("conjugate derivative evaluated at non-positive {y}")));
        }
        let d = self.field.weight(leaf)?;
        Ok(match &self.field {
            UtilityField::Log => -1.0 / y,
            f => -(y / d).powf(-1.0 / f.gamma()),
        })
    }

    /// `V(T, 0) = sup_x U(T, x)`.
    pub fn v_at_zero(&self) -> f64 {
        self.field.u_sup()
    }
}

/// Which inequality of the ratio bounds failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RraSide {
    /// `U′(zx) ≤ z^{−γ₁} U′(x)`
    Marginal,
    /// `−V′(zy) ≤ z^{−γ₂} (−V′(y))`
    InverseMarginal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RraViolation {
    pub side: RraSide,
    pub x: f64,
    pub z: f64,
    pub leaf: usize,
    /// Left side minus right side (positive).
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RraReport {
    pub gamma1: f64,
    pub gamma2: f64,
    pub checked: usize,
    pub violations: Vec<RraViolation>,
}

impl RraReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `U′(zx) ≤ z^{−γ₁}U′(x)` and `−V′(zx) ≤ z^{−γ₂}(−V′(x))` on every
/// `(x, z, leaf)` of the grid. Points with `x ≤ 0` or `z ∉ (0, 1]` are
/// skipped. A relative slack of `1e-12` absorbs rounding.
pub fn check_rra_bounds(
    field: &UtilityField,
    gamma1: f64,
    gamma2: f64,
    xs: &[f64],
    zs: &[f64],
    leaves: &[usize],
) -> Result<RraReport> {
    let v = field.conjugate();
    let mut report = RraReport { gamma1, gamma2, checked: 0, violations: Vec::new() };
    for &leaf in leaves {
        for &x in xs.iter().filter(|x| **x > 0.0) {
            for &z in zs.iter().filter(|z| **z > 0.0 && **z <= 1.0) {
                report.checked += 1;
                let lhs = field.u_prime(z * x, leaf)?;
                let rhs = z.powf(-gamma1) * field.u_prime(x, leaf)?;
                if lhs > rhs * (1.0 + 1e-12) {
                    report.violations.push(RraViolation { side: RraSide::Marginal, x, z, leaf, excess: lhs - rhs });
                }
                let lhs = -v.v_prime(z * x, leaf)?;
                let rhs = -v.v_prime(x, leaf)? * z.powf(-gamma2);
                if lhs > rhs * (1.0 + 1e-12) {
                    report.violations.push(RraViolation {
                        side: RraSide::InverseMarginal,
                        x,
                        z,
                        leaf,
                        excess: lhs - rhs,
                    });
                }
            }
        }
    }
    Ok(report)
}
