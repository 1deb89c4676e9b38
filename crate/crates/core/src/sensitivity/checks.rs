use super::fd::{finite_difference_derivative, EpsGrid, FdEstimate};
use super::formula::{derivative_formula_mc, derivative_formula_tree};
use super::indirect::{indirect_utility_mc, indirect_utility_tree, tree_wealth};
use crate::duality::{solve_primal, LineSearch};
use crate::lattice::{BrownianModel, Filtration, FiltrationTree, MarketModel, PredictableControl, TreeMarket};
use crate::perturbation::{perturbed_market, ConstantPerturbation, PerturbationSpec};
use crate::stats::{batch_means, Estimate, BATCHES};
use crate::utility::UtilityField;
use crate::{Error, Result};

/// Accepted range for the ratio of slopes `|J^ε − J⁰|/|ε|` under a halving
/// of `ε`.
pub const CONTINUITY_BAND: (f64, f64) = (0.75, 1.25);

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityReport {
    /// `(ε, |J^ε − J⁰|/|ε| per node or bucket)` for every non-zero `ε`.
    pub slopes: Vec<(f64, Vec<f64>)>,
    /// `(ε, ε/2, slope ratio per node or bucket)`.
    pub ratios: Vec<(f64, f64, Vec<f64>)>,
    /// Largest `|J^0 − J^0|` over repeated zero entries; exactly 0.
    pub zero_diff: f64,
}

impl ContinuityReport {
    pub fn passed(&self) -> bool {
        self.zero_diff == 0.0
            && !self.ratios.is_empty()
            && self.ratios.iter().flat_map(|r| r.2.iter()).all(|r| (CONTINUITY_BAND.0..=CONTINUITY_BAND.1).contains(r))
    }
}

/// Slope stability over an `ε` sweep that contains 0. Each entry holds
/// `J^ε_t` per node or bucket.
pub fn continuity_check(sweep: &[(f64, Vec<f64>)]) -> Result<ContinuityReport> {
    let zeros: Vec<&Vec<f64>> = sweep.iter().filter(|e| e.0 == 0.0).map(|e| &e.1).collect();
    let Some(base) = zeros.first() else {
        return Err(Error::Precondition("continuity sweep must include ε = 0".into()));
    };
    if sweep.iter().any(|e| e.1.len() != base.len()) {
        return Err(Error::ShapeMismatch("sweep entries differ in length".into()));
    }
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect::<Vec<f64>>();
    let zero_diff = zeros.iter().flat_map(|z| diff(z, base)).fold(0.0, f64::max);
    let mut slopes: Vec<(f64, Vec<f64>)> = sweep
        .iter()
        .filter(|e| e.0 != 0.0)
        .map(|(eps, v)| (*eps, diff(v, base).iter().map(|d| d / eps.abs()).collect()))
        .collect();
    slopes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ratios = Vec::new();
    for (eps, s) in &slopes {
        if let Some((half, sh)) = slopes.iter().find(|(e, _)| (e - eps / 2.0).abs() <= 1e-12 * eps.abs()) {
            ratios.push((*eps, *half, sh.iter().zip(s).map(|(a, b)| a / b).collect()));
        }
    }
    Ok(ContinuityReport { slopes, ratios, zero_diff })
}

/// `u^ε(X^{π,ε}_t) − E_t[U(X_T)]` per time-`t` node, where `X` follows the
/// base-market optimal fractions in the ε-market from `X^{π,ε}_t`.
pub fn near_optimality_gaps(
    model: &MarketModel<FiltrationTree>,
    spec: &PerturbationSpec,
    pi: f64,
    x0: f64,
    u: &UtilityField,
    t: usize,
    eps: f64,
) -> Result<Vec<f64>> {
    let optimal = indirect_utility_tree(model, spec, pi, x0, u, t, eps)?;
    let x = tree_wealth(model, spec, pi, x0, eps)?;
    let base = TreeMarket::from_model(model)?;
    let tree = base.tree();
    let mut xi = vec![0.0; tree.len()];
    for &m in &optimal.nodes {
        xi[m] = x[m];
    }
    let h0 = solve_primal(&base, u, &xi, t, LineSearch::Golden)?.h;
    let market = perturbed_market(model, spec, eps)?;
    let mut wealth = xi.clone();
    for s in 0..tree.len() {
        if tree.depth(s) > t {
            let p = tree.parent(s).expect("non-root node has a parent");
            let g = 1.0 + h0[p] * market.dr(s);
            if !(g > 0.0) {
                return Err(Error::Inadmissible(format!("base-optimal fraction is inadmissible at node {p}")));
            }
            wealth[s] = wealth[p] * g;
        }
    }
    let mut terminal = vec![0.0; tree.len()];
    for &l in tree.leaves() {
        terminal[l] = u.u_eval(wealth[l], l)?;
    }
    Ok(optimal
        .nodes
        .iter()
        .zip(&optimal.values)
        .map(|(&m, v)| v - tree.conditional_expectation(m, &terminal))
        .collect())
}

/// Largest `E[J⁰_{t+1} | F_t] − J⁰_t` over all non-terminal nodes; at most
/// rounding for a supermartingale.
pub fn supermartingale_residual(
    model: &MarketModel<FiltrationTree>,
    pi: f64,
    x0: f64,
    u: &UtilityField,
) -> Result<f64> {
    let market = TreeMarket::from_model(model)?;
    let tree = market.tree();
    let x = market.wealth(x0, &PredictableControl::constant(tree.len(), pi))?;
    let mut j = vec![0.0; tree.len()];
    for t in 0..=tree.n_periods() {
        let sol = solve_primal(&market, u, &x, t, LineSearch::Golden)?;
        for &m in tree.nodes_at(t) {
            j[m] = sol.u[m];
        }
    }
    let mut worst = f64::NEG_INFINITY;
    for s in (0..tree.len()).filter(|&s| !tree.is_terminal(s)) {
        let next: f64 = tree.children(s).iter().map(|&c| tree.branch_prob(c) * j[c]).sum();
        worst = worst.max(next - j[s]);
    }
    Ok(worst)
}

/// Whether `c ↦ u⁰(c·X^{π,0}_t, t, T)` is strictly increasing at every
/// time-`t` node for the given scales (sorted increasingly).
pub fn monotonicity_check(
    model: &MarketModel<FiltrationTree>,
    pi: f64,
    x0: f64,
    u: &UtilityField,
    t: usize,
    scales: &[f64],
) -> Result<bool> {
    let market = TreeMarket::from_model(model)?;
    let tree = market.tree();
    let x = market.wealth(x0, &PredictableControl::constant(tree.len(), pi))?;
    let mut vals: Vec<Vec<f64>> = Vec::with_capacity(scales.len());
    for &c in scales {
        let xi: Vec<f64> = x.iter().map(|v| c * v).collect();
        let sol = solve_primal(&market, u, &xi, t, LineSearch::Golden)?;
        vals.push(tree.nodes_at(t).iter().map(|&m| sol.u[m]).collect());
    }
    Ok(vals.windows(2).all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| b > a)))
}

/// Derivative formula against the Richardson-extrapolated finite
/// difference at one time-`t` node or for the ensemble mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    pub t: usize,
    pub time: f64,
    /// Time-`t` node (tree mode).
    pub node: Option<usize>,
    pub formula: Estimate,
    pub fd: FdEstimate,
    /// Standard error of `formula − fd` combining the paired Monte Carlo
    /// error and the extrapolation spread.
    pub combined_se: f64,
    /// Allowed `|formula − fd|`.
    pub tol: f64,
}

impl SensitivityReport {
    pub fn gap(&self) -> f64 {
        (self.formula.mean - self.fd.extrapolated.mean).abs()
    }

    pub fn passed(&self) -> bool {
        self.gap() <= self.tol
    }
}

/// Ensemble check with common random numbers: the tolerance is the larger
/// of 1% of the finite difference and three combined standard errors.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity_mc(
    model: &BrownianModel,
    u: &UtilityField,
    pert: &ConstantPerturbation,
    pi: f64,
    x0: f64,
    t: usize,
    grid: &EpsGrid,
) -> Result<SensitivityReport> {
    let formula = derivative_formula_mc(model, u, pert, pi, x0, t)?;
    let fd = finite_difference_derivative(grid, |e| Ok(indirect_utility_mc(model, u, pert, pi, x0, t, e)?.values))?;
    let diffs: Vec<f64> = formula.values.iter().zip(&fd.samples).map(|(a, b)| a - b).collect();
    let paired = batch_means(&diffs, BATCHES);
    let combined_se = (paired.se * paired.se + fd.spread * fd.spread).sqrt();
    let tol = (0.01 * fd.extrapolated.mean.abs()).max(3.0 * combined_se);
    Ok(SensitivityReport { t, time: formula.time, node: None, formula: formula.estimate, fd, combined_se, tol })
}

/// Exact tree check at every time-`t` node with an absolute tolerance.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity_tree(
    model: &MarketModel<FiltrationTree>,
    spec: &PerturbationSpec,
    pi: f64,
    x0: f64,
    u: &UtilityField,
    t: usize,
    grid: &EpsGrid,
    tol: f64,
) -> Result<Vec<SensitivityReport>> {
    let formula = derivative_formula_tree(model, spec, pi, x0, u, t)?;
    let mut sweep = Vec::new();
    for e in grid.points() {
        sweep.push((e, indirect_utility_tree(model, spec, pi, x0, u, t, e)?.values));
    }
    let lookup = |e: f64, k: usize| -> Result<Vec<f64>> {
        Ok(vec![sweep.iter().find(|(x, _)| *x == e).expect("grid point was evaluated").1[k]])
    };
    let mut out = Vec::with_capacity(formula.nodes.len());
    for (k, &m) in formula.nodes.iter().enumerate() {
        let fd = finite_difference_derivative(grid, |e| lookup(e, k))?;
        out.push(SensitivityReport {
            t,
            time: formula.time,
            node: Some(m),
            formula: Estimate { mean: formula.values[k], se: 0.0 },
            combined_se: fd.spread,
            fd,
            tol,
        });
    }
    Ok(out)
}
