use serde::{Deserialize, Serialize};

use crate::lattice::{AdaptedProcess, Filtration, FiltrationTree, MarketModel, PredictableControl, TreeMarket};
use crate::{Error, Result};

/// How `ε` enters the returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `R^ε = (1+εψ)·(M + λ(1+εθ)·⟨M⟩)`.
    #[default]
    Multiplicative,
    /// `R^ε = (1+εψ)·M + (λ+εν)·⟨M⟩`. Without an explicit `ν` it is
    /// reparametrized as `ν = λ(ψ + θ(1+εψ))`, which reproduces the
    /// multiplicative family.
    Additive,
}

/// Perturbation directions `ψ` (volatility) and `θ` (market price of risk).
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    pub psi: PredictableControl,
    pub theta: PredictableControl,
    /// Uniform bound on `|ψ|`.
    pub psi_max: f64,
    pub variant: Variant,
    /// Fixed drift direction for the additive variant.
    pub nu: Option<PredictableControl>,
}

impl PerturbationSpec {
    pub fn new(psi: PredictableControl, theta: PredictableControl, psi_max: f64, variant: Variant) -> Result<Self> {
        if !(psi_max >= 0.0) || !psi_max.is_finite() {
            return Err(Error::PerturbationBound(format!("ψ bound must be finite and nonnegative, got {psi_max}")));
        }
        if psi.len() != theta.len() {
            return Err(Error::ShapeMismatch(format!("ψ has {} entries, θ has {}", psi.len(), theta.len())));
        }
        Ok(Self { psi, theta, psi_max, variant, nu: None })
    }

    /// Additive variant with a fixed `ν`, under which `R^ε` is affine in `ε`.
    pub fn with_nu(mut self, nu: PredictableControl) -> Result<Self> {
        if nu.len() != self.psi.len() {
            return Err(Error::ShapeMismatch(format!("ν has {} entries, ψ has {}", nu.len(), self.psi.len())));
        }
        self.variant = Variant::Additive;
        self.nu = Some(nu);
        Ok(self)
    }

    /// Largest `|ε|` for which `1 + εψ ≥ ½`.
    pub fn neighborhood(&self) -> f64 {
        if self.psi_max > 0.0 {
            0.1f64.min(0.5 / self.psi_max)
        } else {
            0.1
        }
    }

    pub fn check_eps(&self, eps: f64) -> Result<()> {
        let r = self.neighborhood();
        if !eps.is_finite() || eps.abs() > r {
            return Err(Error::PerturbationBound(format!("|ε| = {} exceeds the neighborhood {r}", eps.abs())));
        }
        Ok(())
    }

    /// Checks shapes, the `ψ` bound and finiteness of `θ²·⟨M⟩`.
    pub fn validate<F: Filtration>(&self, model: &MarketModel<F>) -> Result<()> {
        let f = model.filtration();
        let n = f.num_states();
        if self.psi.len() != n {
            return Err(Error::ShapeMismatch(format!("ψ has {} entries for {n} states", self.psi.len())));
        }
        for s in (0..n).filter(|&s| !f.is_terminal(s)) {
            let (p, th) = (self.psi[s], self.theta[s]);
            if !p.is_finite() || p.abs() > self.psi_max {
                return Err(Error::PerturbationBound(format!(
                    "|ψ| = {} exceeds {} at state {s}",
                    p.abs(),
                    self.psi_max
                )));
            }
            if !th.is_finite() {
                return Err(Error::PerturbationBound(format!("θ is not finite at state {s}")));
            }
            if let Some(nu) = &self.nu {
                if !nu[s].is_finite() {
                    return Err(Error::PerturbationBound(format!("ν is not finite at state {s}")));
                }
            }
        }
        let theta_qv = model.qv().integrate_squared(f, &self.theta)?;
        if theta_qv.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::PerturbationBound("θ²·⟨M⟩ is not finite".into()));
        }
        Ok(())
    }

    /// `ν` used by the additive variant at `ε`.
    pub(crate) fn nu_at<F: Filtration>(&self, model: &MarketModel<F>, eps: f64) -> PredictableControl {
        match &self.nu {
            Some(nu) => nu.clone(),
            None => PredictableControl(
                (0..self.psi.len())
                    .map(|s| model.lambda()[s] * (self.psi[s] + self.theta[s] * (1.0 + eps * self.psi[s])))
                    .collect(),
            ),
        }
    }
}

/// Constant perturbation directions, expanded onto any filtration on demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantPerturbation {
    pub psi: f64,
    pub theta: f64,
    #[serde(default)]
    pub variant: Variant,
    /// Fixed `ν` for the additive variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
}

impl ConstantPerturbation {
    pub fn new(psi: f64, theta: f64) -> Self {
        Self { psi, theta, variant: Variant::Multiplicative, nu: None }
    }

    pub fn on(&self, n_states: usize) -> Result<PerturbationSpec> {
        let spec = PerturbationSpec::new(
            PredictableControl::constant(n_states, self.psi),
            PredictableControl::constant(n_states, self.theta),
            self.psi.abs(),
            self.variant,
        )?;
        match self.nu {
            Some(nu) => spec.with_nu(PredictableControl::constant(n_states, nu)),
            None => Ok(spec),
        }
    }

    pub fn neighborhood(&self) -> f64 {
        if self.psi != 0.0 {
            0.1f64.min(0.5 / self.psi.abs())
        } else {
            0.1
        }
    }
}

/// `R^ε`. The perturbation is accumulated as a correction on top of `R⁰`,
/// so `ε = 0` returns `R⁰` exactly.
pub fn perturbed_return<F: Filtration>(
    model: &MarketModel<F>,
    spec: &PerturbationSpec,
    eps: f64,
) -> Result<AdaptedProcess> {
    spec.validate(model)?;
    let f = model.filtration();
    let (m, q, lambda) = (model.driver(), &model.qv().values, model.lambda());
    let base = model.base_return();
    let n = f.num_states();
    let nu = match spec.variant {
        Variant::Additive => Some(spec.nu_at(model, eps)),
        Variant::Multiplicative => None,
    };
    let mut delta = vec![0.0; n];
    let mut out = vec![0.0; n];
    out[0] = base[0];
    for s in 1..n {
        let p = f.parent(s).expect("non-initial state has a parent");
        let (dm, dq) = (m[s] - m[p], q[s] - q[p]);
        let step = match &nu {
            None => {
                let scale = 1.0 + eps * spec.psi[p];
                scale * (dm + lambda[p] * (1.0 + eps * spec.theta[p]) * dq) - (dm + lambda[p] * dq)
            }
            Some(nu) => eps * spec.psi[p] * dm + eps * nu[p] * dq,
        };
        delta[s] = delta[p] + step;
        out[s] = base[s] + delta[s];
    }
    Ok(AdaptedProcess(out))
}

/// The ε-market on a tree, ready for the duality solvers.
pub fn perturbed_market(model: &MarketModel<FiltrationTree>, spec: &PerturbationSpec, eps: f64) -> Result<TreeMarket> {
    TreeMarket::new(model.filtration().clone(), perturbed_return(model, spec, eps)?)
}
