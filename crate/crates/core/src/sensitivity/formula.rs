use super::merton::Merton;
use crate::duality::solve_duality;
use crate::lattice::{
    stochastic_integral, AdaptedProcess, BrownianModel, ExpVariant, Filtration, FiltrationTree, MarketModel,
    PredictableControl, QvMode, TreeMarket,
};
use crate::perturbation::{correction_process, tilted_measure, ConstantPerturbation, PerturbationSpec};
use crate::stats::{batch_means, Estimate, BATCHES};
use crate::utility::UtilityField;
use crate::{Error, Result};

/// First-order derivative of `J^ε_t` at `ε = 0`:
/// `X⁰_t η̂_t ((ψπ−λθ)·M^R_t + E^{ℝ^t}_t[(λθ)·R⁰_T])`.
#[derive(Debug, Clone, PartialEq)]
pub struct FormulaValues {
    pub t: usize,
    pub time: f64,
    /// Time-`t` node ids (tree mode); empty in ensemble mode.
    pub nodes: Vec<usize>,
    /// One value per time-`t` node or per path.
    pub values: Vec<f64>,
    pub estimate: Estimate,
}

/// `(ψπ−λθ)·M^R` with `M^R = R⁰ − π·⟨R⁰⟩`.
fn tilted_driver<F: Filtration>(model: &MarketModel<F>, spec: &PerturbationSpec, pi: f64) -> Result<AdaptedProcess> {
    let f = model.filtration();
    let n = f.num_states();
    let r0 = model.base_return();
    let qv = model.return_qv()?;
    let m_r = AdaptedProcess((0..n).map(|s| r0[s] - pi * (qv.values[s] - qv.values[0])).collect());
    let lt = model.lambda().product(&spec.theta)?;
    let coef = PredictableControl((0..n).map(|s| spec.psi[s] * pi - lt[s]).collect());
    stochastic_integral(f, &coef, &m_r)
}

/// Tree mode: `η̂_t` from the dual solver at `ξ = X^{π,0}_t` and the exact
/// tilted measure.
pub fn derivative_formula_tree(
    model: &MarketModel<FiltrationTree>,
    spec: &PerturbationSpec,
    pi: f64,
    x0: f64,
    u: &UtilityField,
    t: usize,
) -> Result<FormulaValues> {
    let market = TreeMarket::from_model(model)?;
    let tree = market.tree();
    let x = market.wealth(x0, &PredictableControl::constant(tree.len(), pi))?;
    let nodes = tree.nodes_at(t).to_vec();
    let mut xi = vec![0.0; tree.len()];
    for &m in &nodes {
        if !(x[m] > 0.0) {
            return Err(Error::Precondition(format!("X^π_t vanishes at node {m}; η̂ is undefined")));
        }
        xi[m] = x[m];
    }
    let sol = solve_duality(&market, u, &xi, t)?;
    let tilt = tilted_measure(&market, &sol)?;
    let corr = correction_process(model, spec, 0.0, ExpVariant::Multiplicative)?;
    let drv = tilted_driver(model, spec, pi)?;
    let values: Vec<f64> =
        nodes.iter().map(|&m| x[m] * sol.eta_hat[m] * (drv[m] + tilt.expectation(m, &corr.r_bar))).collect();
    let mean = nodes.iter().zip(&values).map(|(&m, v)| tree.conditional_prob(m, 0) * v).sum();
    Ok(FormulaValues { t, time: tree.grid().times()[t], nodes, values, estimate: Estimate { mean, se: 0.0 } })
}

/// Ensemble mode: closed-form `η̂_t = ∂_x u⁰(X⁰_t, t, T)`; the tilted
/// expectation of `R̄_T − R̄_t` is estimated from each path's own suffix
/// weighted by the closed-form `ρ̂ẑ_T`.
pub fn derivative_formula_mc(
    model: &BrownianModel,
    u: &UtilityField,
    pert: &ConstantPerturbation,
    pi: f64,
    x0: f64,
    t: usize,
) -> Result<FormulaValues> {
    let merton = Merton::new(model.sigma, model.lambda, u.clone())?;
    let grid = model.ensemble.grid();
    if t > grid.n_steps() {
        return Err(Error::Precondition(format!("t index {t} beyond {} steps", grid.n_steps())));
    }
    let n = grid.n_steps() + 1;
    let spec = pert.on(n)?;
    let time = grid.times()[t];
    let tau = grid.horizon() - time;
    let kappa = merton.sharpe(0.0, pert.theta);
    let values: Vec<Result<f64>> = model.ensemble.par_map(|_, w| {
        let m = model.path_model(w, QvMode::Predictable)?;
        let x = super::indirect::ensemble_wealth(&m, &spec, pi, x0, 0.0)?;
        let eta = merton.marginal(x[t], tau, kappa)?;
        let drv = tilted_driver(&m, &spec, pi)?;
        let r_bar = correction_process(&m, &spec, 0.0, ExpVariant::Exponential)?.r_bar;
        let weight = merton.tilt_weight(w[n - 1] - w[t], tau);
        Ok(x[t] * eta * (drv[t] + r_bar[t] + weight * (r_bar[n - 1] - r_bar[t])))
    });
    let values = values.into_iter().collect::<Result<Vec<f64>>>()?;
    let estimate = batch_means(&values, BATCHES);
    Ok(FormulaValues { t, time, nodes: Vec::new(), values, estimate })
}
