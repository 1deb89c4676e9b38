use super::spec::{PerturbationSpec, Variant};
use crate::lattice::{
    stochastic_exponential, stochastic_exponential_with_qv, stochastic_integral, AdaptedProcess, ExpVariant,
    Filtration, MarketModel, PredictableControl, QuadraticVariation,
};
use crate::Result;

/// The base-market wealth `L^ε = E(η^ε·R⁰)` linking perturbed and base
/// wealth, together with the auxiliary return `R̄ = (λθ)·R⁰`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionProcess {
    pub eps: f64,
    pub variant: ExpVariant,
    /// `η^ε`.
    pub eta: PredictableControl,
    /// `L^ε`.
    pub l: AdaptedProcess,
    /// `R̄`.
    pub r_bar: AdaptedProcess,
    /// `⟨R̄⟩`.
    pub r_bar_qv: QuadraticVariation,
}

impl CorrectionProcess {
    /// `F = −R̄` at `state`; at terminal states this is `−R̄_T`.
    pub fn f(&self, state: usize) -> f64 {
        -self.r_bar[state]
    }

    /// `∂L^ε/∂ε = L^ε(−R̄ − ε⟨R̄⟩)`, exact for the exponential variant with
    /// `η^ε = −ελθ`.
    pub fn l_derivative(&self) -> AdaptedProcess {
        AdaptedProcess(
            self.l
                .iter()
                .zip(self.r_bar.iter().zip(self.r_bar_qv.values.iter()))
                .map(|(l, (r, q))| l * (-r - self.eps * q))
                .collect(),
        )
    }
}

/// `η^ε` for the spec's variant: `−ελθ` for the multiplicative family,
/// `λ − (λ+εν)/(1+εψ)` for the additive one.
fn eta<F: Filtration>(model: &MarketModel<F>, spec: &PerturbationSpec, eps: f64) -> PredictableControl {
    let lambda = model.lambda();
    match spec.variant {
        Variant::Multiplicative => {
            PredictableControl((0..lambda.len()).map(|s| -eps * lambda[s] * spec.theta[s]).collect())
        }
        Variant::Additive => {
            let nu = spec.nu_at(model, eps);
            PredictableControl(
                (0..lambda.len()).map(|s| lambda[s] - (lambda[s] + eps * nu[s]) / (1.0 + eps * spec.psi[s])).collect(),
            )
        }
    }
}

pub fn correction_process<F: Filtration>(
    model: &MarketModel<F>,
    spec: &PerturbationSpec,
    eps: f64,
    variant: ExpVariant,
) -> Result<CorrectionProcess> {
    spec.validate(model)?;
    let f = model.filtration();
    let r0 = model.base_return();
    let r0_qv = model.return_qv()?;
    let eta = eta(model, spec, eps);
    let x = stochastic_integral(f, &eta, r0)?;
    let l = match variant {
        ExpVariant::Multiplicative => stochastic_exponential(f, &x, ExpVariant::Multiplicative)?,
        ExpVariant::Exponential => stochastic_exponential_with_qv(f, &x, &r0_qv.integrate_squared(f, &eta)?)?,
    };
    let lt: PredictableControl = model.lambda().product(&spec.theta)?;
    let r_bar = stochastic_integral(f, &lt, r0)?;
    let r_bar_qv = r0_qv.integrate_squared(f, &lt)?;
    Ok(CorrectionProcess { eps, variant, eta, l, r_bar, r_bar_qv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::samples;
    use crate::perturbation::ConstantPerturbation;

    #[test]
    fn zero_eps_is_one() {
        let model = samples::random_market(3, 3, 3).unwrap();
        let n = model.filtration().len();
        for spec in [
            ConstantPerturbation::new(0.2, 0.7),
            ConstantPerturbation { nu: Some(1.3), ..ConstantPerturbation::new(0.2, 0.7) },
        ] {
            let spec = spec.on(n).unwrap();
            for v in [ExpVariant::Multiplicative, ExpVariant::Exponential] {
                let c = correction_process(&model, &spec, 0.0, v).unwrap();
                assert!(c.l.iter().all(|&l| l == 1.0));
            }
        }
    }

    #[test]
    fn zero_theta_is_one() {
        let model = samples::trinomial(2, 1.0, 0.2, 1.75).unwrap();
        let spec = ConstantPerturbation::new(0.1, 0.0).on(model.filtration().len()).unwrap();
        for eps in [-0.05, 0.03, 0.1] {
            let c = correction_process(&model, &spec, eps, ExpVariant::Multiplicative).unwrap();
            assert!(c.l.iter().all(|&l| l == 1.0));
        }
    }
}
