use super::correction::correction_process;
use super::spec::{perturbed_return, ConstantPerturbation, PerturbationSpec};
use crate::lattice::{
    stochastic_exponential, stochastic_exponential_with_qv, stochastic_integral, AdaptedProcess, BrownianModel,
    ExpVariant, Filtration, MarketModel, PredictableControl, QvMode,
};
use crate::stats::{batch_means, BATCHES};
use crate::{Error, Result};

/// Accepted range for the ratio of errors under a halving of `Δt`
/// (first-order convergence).
pub const HALVING_BAND: (f64, f64) = (0.35, 0.65);

/// Both sides of `X^{π,ε} = X^{π,0}·E(ε(ψπ−λθ)·M^R)/L^ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionTerms {
    /// `X^{π,ε}`.
    pub x_eps: AdaptedProcess,
    /// `X^{π,0}`.
    pub x_base: AdaptedProcess,
    /// `E(ε(ψπ−λθ)·M^R)`.
    pub tilt: AdaptedProcess,
    /// `L^ε`.
    pub l: AdaptedProcess,
}

impl DecompositionTerms {
    /// `X^{π,0}·E(…)/L^ε`.
    pub fn predicted(&self) -> AdaptedProcess {
        AdaptedProcess((0..self.x_eps.len()).map(|s| self.x_base[s] * self.tilt[s] / self.l[s]).collect())
    }

    /// `|X^{π,ε} − predicted| / X^{π,0}` per state.
    pub fn relative_error(&self) -> AdaptedProcess {
        let pred = self.predicted();
        AdaptedProcess((0..pred.len()).map(|s| (self.x_eps[s] - pred[s]).abs() / self.x_base[s]).collect())
    }

    pub fn sup_relative_error(&self) -> f64 {
        self.relative_error().iter().fold(0.0, |a, &b| a.max(b))
    }
}

fn wealth<F: Filtration>(f: &F, x0: f64, pi: &PredictableControl, r: &AdaptedProcess) -> Result<AdaptedProcess> {
    let gains = stochastic_integral(f, pi, r)?;
    let n = f.num_states();
    let mut x = vec![x0; n];
    for s in 1..n {
        let p = f.parent(s).expect("non-initial state has a parent");
        let g = 1.0 + gains[s] - gains[p];
        if !(g > 0.0) {
            return Err(Error::Inadmissible(format!("proportional wealth is not positive at state {s}")));
        }
        x[s] = x[p] * g;
    }
    Ok(AdaptedProcess(x))
}

/// Wealth of the proportional strategy `π` from `x̄` in the base and
/// ε-markets, and the two factors of the decomposition. Wealths compound
/// multiplicatively; `variant` selects the discretization of both
/// stochastic exponentials on the right-hand side, with `M^R = R⁰ − π·⟨R⁰⟩`
/// built from the model's quadratic variation.
pub fn decomposition_terms<F: Filtration>(
    model: &MarketModel<F>,
    spec: &PerturbationSpec,
    pi: &PredictableControl,
    x0: f64,
    eps: f64,
    variant: ExpVariant,
) -> Result<DecompositionTerms> {
    if !(x0 > 0.0) {
        return Err(Error::Domain(format!("initial wealth must be positive, got {x0}")));
    }
    let f = model.filtration();
    let r0 = model.base_return();
    let r_eps = perturbed_return(model, spec, eps)?;
    let x_base = wealth(f, x0, pi, r0)?;
    let x_eps = wealth(f, x0, pi, &r_eps)?;
    let r0_qv = model.return_qv()?;
    let drift = stochastic_integral(f, pi, &r0_qv.values)?;
    let m_r = AdaptedProcess(r0.iter().zip(drift.iter()).map(|(r, d)| r - d).collect());
    let lt = model.lambda().product(&spec.theta)?;
    let coef = PredictableControl((0..pi.len()).map(|s| eps * (spec.psi[s] * pi[s] - lt[s])).collect());
    let y = stochastic_integral(f, &coef, &m_r)?;
    let tilt = match variant {
        ExpVariant::Multiplicative => stochastic_exponential(f, &y, variant)?,
        ExpVariant::Exponential => {
            // ⟨M^R⟩ = ⟨R⁰⟩ in predictable mode; realized mode squares the increments.
            let qv_mr = match r0_qv.mode {
                QvMode::Predictable => r0_qv.clone(),
                QvMode::Realized => crate::lattice::quadratic_variation(f, &m_r, QvMode::Realized)?,
            };
            stochastic_exponential_with_qv(f, &y, &qv_mr.integrate_squared(f, &coef)?)?
        }
    };
    let l = correction_process(model, spec, eps, variant)?.l;
    Ok(DecompositionTerms { x_eps, x_base, tilt, l })
}

/// Mean over paths of the pathwise sup relative decomposition error at one
/// grid resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergencePoint {
    pub dt: f64,
    pub error: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub points: Vec<ConvergencePoint>,
    /// `e(Δt/2)/e(Δt)` for consecutive points.
    pub ratios: Vec<f64>,
}

impl ConvergenceReport {
    pub fn passed(&self) -> bool {
        !self.ratios.is_empty() && self.ratios.iter().all(|r| (HALVING_BAND.0..=HALVING_BAND.1).contains(r))
    }

    /// Least-squares slope of `log₂ e` against `log₂ Δt`.
    pub fn order(&self) -> f64 {
        let pts: Vec<(f64, f64)> = self.points.iter().map(|p| (p.dt.log2(), p.error.log2())).collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        sxy / sxx
    }
}

/// Measures the decomposition error of the proportional strategy `π` on
/// coarsenings of the model's grid by each of `factors` (coarsest first).
/// Paths share their Brownian increments across resolutions, realized
/// quadratic variation is used and both stochastic exponentials use the
/// exponential form.
pub fn wealth_decomposition_check(
    model: &BrownianModel,
    pert: &ConstantPerturbation,
    pi: f64,
    x0: f64,
    eps: f64,
    factors: &[usize],
) -> Result<ConvergenceReport> {
    let mut points = Vec::with_capacity(factors.len());
    for &k in factors {
        let coarse = model.coarsen(k)?;
        let n = coarse.ensemble.grid().n_steps() + 1;
        let spec = pert.on(n)?;
        let pi_c = PredictableControl::constant(n, pi);
        let errs: Vec<Result<f64>> = coarse.ensemble.par_map(|_, w| {
            let m = coarse.path_model(w, QvMode::Realized)?;
            Ok(decomposition_terms(&m, &spec, &pi_c, x0, eps, ExpVariant::Exponential)?.sup_relative_error())
        });
        let errs = errs.into_iter().collect::<Result<Vec<f64>>>()?;
        let est = batch_means(&errs, BATCHES);
        points.push(ConvergencePoint { dt: coarse.ensemble.grid().step(0), error: est.mean, se: est.se });
    }
    let ratios = points.windows(2).map(|w| w[1].error / w[0].error).collect();
    Ok(ConvergenceReport { points, ratios })
}
