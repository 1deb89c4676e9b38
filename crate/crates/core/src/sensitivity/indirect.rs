use super::merton::Merton;
use crate::duality::{solve_primal, LineSearch, MAX_BRANCHING, MAX_PERIODS};
use crate::lattice::{
    quadratic_variation, stochastic_exponential_with_qv, AdaptedProcess, BrownianModel, FiltrationTree, MarketModel,
    PathChain, PredictableControl, QvMode,
};
use crate::perturbation::{perturbed_market, perturbed_return, ConstantPerturbation, PerturbationSpec};
use crate::stats::{batch_means, Estimate, BATCHES};
use crate::utility::UtilityField;
use crate::{Error, Result};

/// `J^{ε,T}_t = u^ε(X^{π,ε}_t, t, T)` at every time-`t` node of a tree or on
/// every simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct IndirectUtilityPoint {
    /// Depth or grid index of `t`.
    pub t: usize,
    pub time: f64,
    pub eps: f64,
    /// Time-`t` node ids (tree mode); empty in ensemble mode.
    pub nodes: Vec<usize>,
    /// One value per time-`t` node or per path.
    pub values: Vec<f64>,
    /// Probability-weighted mean over nodes (standard error 0), or the
    /// Monte Carlo mean with its batch-means standard error.
    pub estimate: Estimate,
}

/// Proportional wealth `X^{π,ε}` on a tree, compounded one period at a time.
pub fn tree_wealth(
    model: &MarketModel<FiltrationTree>,
    spec: &PerturbationSpec,
    pi: f64,
    x0: f64,
    eps: f64,
) -> Result<AdaptedProcess> {
    let market = perturbed_market(model, spec, eps)?;
    market.wealth(x0, &PredictableControl::constant(model.filtration().len(), pi))
}

/// Exact `J^ε_t` on a tree: the primal problem of the ε-market started from
/// `X^{π,ε}_t` at every time-`t` node.
#[allow(clippy::too_many_arguments)]
pub fn indirect_utility_tree(
    model: &MarketModel<FiltrationTree>,
    spec: &PerturbationSpec,
    pi: f64,
    x0: f64,
    u: &UtilityField,
    t: usize,
    eps: f64,
) -> Result<IndirectUtilityPoint> {
    let market = perturbed_market(model, spec, eps)?;
    market.check_size(MAX_PERIODS, MAX_BRANCHING)?;
    let tree = market.tree();
    if t > tree.n_periods() {
        return Err(Error::Precondition(format!("t = {t} beyond {} periods", tree.n_periods())));
    }
    let x = market.wealth(x0, &PredictableControl::constant(tree.len(), pi))?;
    let nodes = tree.nodes_at(t).to_vec();
    let mut xi = vec![0.0; tree.len()];
    for &m in &nodes {
        xi[m] = x[m];
    }
    let sol = solve_primal(&market, u, &xi, t, LineSearch::Golden)?;
    let values: Vec<f64> = nodes.iter().map(|&m| sol.u[m]).collect();
    let mean = nodes.iter().zip(&values).map(|(&m, v)| tree.conditional_prob(m, 0) * v).sum();
    Ok(IndirectUtilityPoint {
        t,
        time: tree.grid().times()[t],
        eps,
        nodes,
        values,
        estimate: Estimate { mean, se: 0.0 },
    })
}

/// Closed-form `u^ε(x, t, T)` for constant coefficients, `τ = T − t`.
pub fn indirect_utility_closed_form(
    merton: &Merton,
    pert: &ConstantPerturbation,
    x: f64,
    tau: f64,
    eps: f64,
) -> Result<f64> {
    merton.value(x, tau, merton.sharpe(eps, pert.theta))
}

/// `X^{π,ε} = x̄·E(π·R^ε)` along one path in exponential form, with
/// `⟨R^ε⟩ = (1+εψ)²·⟨M⟩` in predictable mode and realized otherwise.
pub fn ensemble_wealth(
    model: &MarketModel<PathChain>,
    spec: &PerturbationSpec,
    pi: f64,
    x0: f64,
    eps: f64,
) -> Result<AdaptedProcess> {
    let f = model.filtration();
    let r = perturbed_return(model, spec, eps)?;
    let gains = AdaptedProcess(r.iter().map(|v| pi * (v - r[0])).collect());
    let qv = match model.mode() {
        QvMode::Predictable => {
            let vol = PredictableControl((0..spec.psi.len()).map(|s| pi * (1.0 + eps * spec.psi[s])).collect());
            model.qv().integrate_squared(f, &vol)?
        }
        QvMode::Realized => quadratic_variation(f, &gains, QvMode::Realized)?,
    };
    let e = stochastic_exponential_with_qv(f, &gains, &qv)?;
    Ok(AdaptedProcess(e.iter().map(|v| x0 * v).collect()))
}

/// Nested Monte Carlo `J^ε_t`: every path is simulated up to grid index `t`
/// and continued with the closed-form value. Uses the exact `⟨M⟩ = σ²t`.
#[allow(clippy::too_many_arguments)]
pub fn indirect_utility_mc(
    model: &BrownianModel,
    u: &UtilityField,
    pert: &ConstantPerturbation,
    pi: f64,
    x0: f64,
    t: usize,
    eps: f64,
) -> Result<IndirectUtilityPoint> {
    let merton = Merton::new(model.sigma, model.lambda, u.clone())?;
    let grid = model.ensemble.grid();
    if t > grid.n_steps() {
        return Err(Error::Precondition(format!("t index {t} beyond {} steps", grid.n_steps())));
    }
    let spec = pert.on(grid.n_steps() + 1)?;
    let time = grid.times()[t];
    let tau = grid.horizon() - time;
    let values: Vec<Result<f64>> = model.ensemble.par_map(|_, w| {
        let m = model.path_model(w, QvMode::Predictable)?;
        let x = ensemble_wealth(&m, &spec, pi, x0, eps)?;
        indirect_utility_closed_form(&merton, pert, x[t], tau, eps)
    });
    let values = values.into_iter().collect::<Result<Vec<f64>>>()?;
    let estimate = batch_means(&values, BATCHES);
    Ok(IndirectUtilityPoint { t, time, eps, nodes: Vec::new(), values, estimate })
}
