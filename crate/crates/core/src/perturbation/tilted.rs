use crate::duality::DualitySolution;
use crate::lattice::{AdaptedProcess, Filtration, FiltrationTree, TreeMarket};
use crate::{Error, Result};

/// Tolerance on `E_t[ρ̂ẑ_T] = 1` at the time-`t` nodes.
pub const TILT_TOL: f64 = 1e-8;

/// The measure with density 1 up to `t` and `E_s[ρ̂ẑ_T]` after `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedMeasure {
    t: usize,
    tree: FiltrationTree,
    density: AdaptedProcess,
}

/// Builds the tilted measure from a matched primal/dual solution at start
/// depth `sol.t`. Every time-`t` node needs `ξ > 0`.
pub fn tilted_measure(market: &TreeMarket, sol: &DualitySolution) -> Result<TiltedMeasure> {
    let tree = market.tree();
    let t = sol.t;
    let n = tree.len();
    let mut terminal = vec![0.0; n];
    for &leaf in tree.leaves() {
        let v = sol.rho()[leaf] * sol.z()[leaf];
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Precondition(format!("ρ̂ẑ_T is not a finite nonnegative number at leaf {leaf}")));
        }
        terminal[leaf] = v;
    }
    TiltedMeasure::from_terminal(tree, t, &terminal)
}

impl TiltedMeasure {
    /// Density of a measure given directly by its terminal density, which
    /// must have conditional mean 1 at every time-`t` node.
    pub fn from_terminal(tree: &FiltrationTree, t: usize, terminal: &[f64]) -> Result<Self> {
        let n = tree.len();
        let mut density = vec![1.0; n];
        for s in 0..n {
            if tree.depth(s) > t {
                density[s] = tree.conditional_expectation(s, terminal);
            }
        }
        for &m in tree.nodes_at(t) {
            let mass = tree.conditional_expectation(m, terminal);
            if (mass - 1.0).abs() > TILT_TOL {
                return Err(Error::Precondition(format!(
                    "E_t[ρ̂ẑ_T] = {mass} at node {m}; the density is not normalized"
                )));
            }
        }
        Ok(Self { t, tree: tree.clone(), density: AdaptedProcess(density) })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn density(&self) -> &AdaptedProcess {
        &self.density
    }

    pub fn tree(&self) -> &FiltrationTree {
        &self.tree
    }

    /// `E^ℝ[X | node]` for a terminal random variable given per state
    /// (only leaf entries are read).
    pub fn expectation(&self, node: usize, terminal: &[f64]) -> f64 {
        let num: f64 =
            self.tree.leaves_below(node).iter().map(|&(leaf, p)| p * self.density[leaf] * terminal[leaf]).sum();
        num / self.density[node]
    }

    /// `Σ_leaves P(leaf)·density(leaf)`.
    pub fn total_mass(&self) -> f64 {
        self.tree.leaves().iter().map(|&l| self.tree.conditional_prob(l, 0) * self.density[l]).sum()
    }

    /// Largest `|D_s − Σ_c p_c D_c|` over non-terminal states: zero for a
    /// martingale density.
    pub fn consistency_residual(&self) -> f64 {
        let tree = &self.tree;
        (0..tree.len())
            .filter(|&s| !tree.is_terminal(s))
            .map(|s| {
                let next: f64 = tree.children(s).iter().map(|&c| tree.branch_prob(c) * self.density[c]).sum();
                (self.density[s] - next).abs()
            })
            .fold(0.0, f64::max)
    }
}
