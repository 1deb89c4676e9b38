//! Standard tree markets used by the checks and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::calculus::{AdaptedProcess, PredictableControl};
use super::grid::TimeGrid;
use super::market::MarketModel;
use super::tree::{Filtration, FiltrationTree, TreeBuilder};
use crate::Result;

fn grow(grid: TimeGrid, probs: &[f64], steps: &[f64], lambda: f64) -> Result<MarketModel<FiltrationTree>> {
    let tree = FiltrationTree::uniform(grid, probs)?;
    let mut m = vec![0.0; tree.len()];
    for s in 0..tree.len() {
        for (k, &c) in tree.children(s).iter().enumerate() {
            m[c] = m[s] + steps[k];
        }
    }
    let n = tree.len();
    MarketModel::new(tree, AdaptedProcess(m), PredictableControl::constant(n, lambda))
}

/// Symmetric binomial tree: `ΔM = ±σ√Δt` with probability ½ each.
pub fn binomial(periods: usize, horizon: f64, sigma: f64, lambda: f64) -> Result<MarketModel<FiltrationTree>> {
    let grid = TimeGrid::uniform(horizon, periods)?;
    let d = sigma * grid.step(0).sqrt();
    grow(grid, &[0.5, 0.5], &[d, -d], lambda)
}

/// Symmetric trinomial tree: `ΔM ∈ {σ√(2Δt), 0, −σ√(2Δt)}` with
/// probabilities ¼, ½, ¼, so that `Var(ΔM) = σ²Δt`.
pub fn trinomial(periods: usize, horizon: f64, sigma: f64, lambda: f64) -> Result<MarketModel<FiltrationTree>> {
    let grid = TimeGrid::uniform(horizon, periods)?;
    let d = sigma * (2.0 * grid.step(0)).sqrt();
    grow(grid, &[0.25, 0.5, 0.25], &[d, 0.0, -d], lambda)
}

/// Random non-recombining market: every node branches two to
/// `max_branching` ways with random probabilities, centred random
/// increments of size about `0.1` and `λ` drawn from `[-1, 2]`.
pub fn random_market(seed: u64, periods: usize, max_branching: usize) -> Result<MarketModel<FiltrationTree>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = TimeGrid::uniform(1.0, periods)?;
    let mut b = TreeBuilder::new(grid);
    let mut incr = vec![0.0];
    let mut frontier = vec![b.root()];
    for _ in 0..periods {
        let mut next = Vec::new();
        for &v in &frontier {
            let k = rng.random_range(2..=max_branching.max(2));
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let x: Vec<f64> = (0..k).map(|_| rng.random_range(-0.15..0.15)).collect();
            let mean: f64 = probs.iter().zip(&x).map(|(p, x)| p * x).sum();
            for (p, x) in probs.iter().zip(&x) {
                let c = b.add_child(v, *p);
                incr.push(x - mean);
                debug_assert_eq!(c + 1, incr.len());
                next.push(c);
            }
        }
        frontier = next;
    }
    let tree = b.build()?;
    let mut m = vec![0.0; tree.len()];
    for s in 1..tree.len() {
        let p = tree.parent(s).expect("non-root node has a parent");
        m[s] = m[p] + incr[tree.label(s)];
    }
    let lambda = (0..tree.len()).map(|_| rng.random_range(-1.0..2.0)).collect();
    MarketModel::new(tree, AdaptedProcess(m), PredictableControl(lambda))
}
