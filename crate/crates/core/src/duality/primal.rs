//! Backward dynamic programming for the primal problem.
//!
//! For a homogeneous utility the value function at every node stays in the
//! family: `A·x^{1−γ}/(1−γ)` for power utility, `log x + a` for the
//! logarithm. Each node therefore reduces to a one-dimensional concave
//! maximization over the fraction `h` invested in the risky asset.

use crate::lattice::{AdaptedProcess, Filtration, PredictableControl, TreeMarket};
use crate::utility::UtilityField;
use crate::{Error, Result};

/// Golden-section tolerance on the fraction.
const GOLDEN_TOL: f64 = 1e-10;

/// How the per-node line search is started.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LineSearch {
    /// Golden section over the admissible interval, then Newton polish.
    #[default]
    Golden,
    /// Safeguarded Newton iteration started from the given fraction
    /// (clamped into the admissible interval).
    NewtonFrom(f64),
}

/// Primal optimizer and values for start time `t` (a depth of the tree).
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalSolution {
    pub t: usize,
    /// `ξ` per node; only time-`t` entries are meaningful.
    pub xi: Vec<f64>,
    /// Optimal fraction at every non-terminal node at depth ≥ t.
    pub h: PredictableControl,
    /// `ρ̂`: terminal wealth per unit of wealth at `t`; 1 up to `t`.
    pub rho: AdaptedProcess,
    /// Value-function coefficient `A` (power) or `a` (log) per node at depth ≥ t.
    pub coef: Vec<f64>,
    /// `u(ξ, t, T)` per time-`t` node.
    pub u: Vec<f64>,
}

impl PrimalSolution {
    /// Whether `node` carries a (unique) optimizer: `ξ > 0`.
    pub fn has_optimizer(&self, node: usize) -> bool {
        self.xi[node] > 0.0
    }
}

/// Value of the node function with coefficient `coef` at wealth `x ≥ 0`.
pub(crate) fn node_value(u: &UtilityField, coef: f64, x: f64) -> f64 {
    if u.is_log() {
        x.ln() + coef
    } else {
        let g = u.gamma();
        coef * x.powf(1.0 - g) / (1.0 - g)
    }
}

/// Derivative of the node function in wealth.
pub(crate) fn node_marginal(u: &UtilityField, coef: f64, x: f64) -> f64 {
    if u.is_log() {
        1.0 / x
    } else {
        coef * x.powf(-u.gamma())
    }
}

struct NodeProblem<'a> {
    u: &'a UtilityField,
    probs: Vec<f64>,
    dr: Vec<f64>,
    coefs: Vec<f64>,
}

impl NodeProblem<'_> {
    fn value(&self, h: f64) -> f64 {
        self.probs
            .iter()
            .zip(&self.dr)
            .zip(&self.coefs)
            .map(|((p, d), a)| p * node_value(self.u, *a, (1.0 + h * d).max(0.0)))
            .sum()
    }

    /// First and second derivative in `h`, and the size `Σ p|U′ΔR|` of the
    /// terms in the first.
    fn derivs(&self, h: f64) -> (f64, f64, f64) {
        let g = self.u.gamma();
        let (mut d1, mut d2, mut scale) = (0.0, 0.0, 0.0);
        for ((p, d), a) in self.probs.iter().zip(&self.dr).zip(&self.coefs) {
            let w = 1.0 + h * d;
            let m = node_marginal(self.u, *a, w);
            d1 += p * m * d;
            d2 -= p * g * m / w * d * d;
            scale += (p * m * d).abs();
        }
        (d1, d2, scale)
    }

    fn golden(&self, lo: f64, hi: f64) -> f64 {
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let (mut a, mut b) = (lo, hi);
        let mut c = b - r * (b - a);
        let mut d = a + r * (b - a);
        let (mut fc, mut fd) = (self.value(c), self.value(d));
        while b - a > GOLDEN_TOL {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - r * (b - a);
                fc = self.value(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + r * (b - a);
                fd = self.value(d);
            }
        }
        0.5 * (a + b)
    }

    /// Newton on the first-order condition, kept inside a shrinking bracket
    /// `[lo, hi]` where the derivative changes sign. Steps that leave the
    /// bracket or stall away from a root fall back to bisection.
    fn newton(&self, mut lo: f64, mut hi: f64, start: f64) -> f64 {
        let mut h = start.clamp(lo, hi);
        for _ in 0..400 {
            let (d1, d2, scale) = self.derivs(h);
            if (d1.is_finite() && d1.abs() <= 1e-13 * scale) || hi - lo <= 4.0 * f64::EPSILON * (1.0 + h.abs()) {
                return h;
            }
            if d1 > 0.0 {
                lo = lo.max(h);
            } else if d1 < 0.0 {
                hi = hi.min(h);
            }
            let next = h - d1 / d2;
            let stalled = (next - h).abs() <= 1e-15 * (1.0 + h.abs());
            h = if next > lo && next < hi && next.is_finite() && !stalled { next } else { 0.5 * (lo + hi) };
        }
        h
    }
}

/// Solves the primal problem from depth `t` for the per-node initial values
/// `ξ` (indexed by node; only time-`t` entries are read).
pub fn solve_primal(
    market: &TreeMarket,
    u: &UtilityField,
    xi: &[f64],
    t: usize,
    search: LineSearch,
) -> Result<PrimalSolution> {
    let tree = market.tree();
    let n = tree.len();
    if xi.len() != n {
        return Err(Error::ShapeMismatch(format!("ξ has {} entries for {n} nodes", xi.len())));
    }
    if t > tree.n_periods() {
        return Err(Error::Precondition(format!("start depth {t} beyond {} periods", tree.n_periods())));
    }
    for &m in tree.nodes_at(t) {
        if !(xi[m] >= 0.0) || !xi[m].is_finite() {
            return Err(Error::Domain(format!("ξ at node {m} must be finite and nonnegative (got {})", xi[m])));
        }
    }
    let mut coef = vec![0.0; n];
    let mut h = vec![0.0; n];
    for &l in tree.leaves() {
        coef[l] = if u.is_log() { 0.0 } else { u.weight(l)? };
    }
    for depth in (t..tree.n_periods()).rev() {
        for &s in tree.nodes_at(depth) {
            let kids = tree.children(s);
            let prob = NodeProblem {
                u,
                probs: kids.iter().map(|&c| tree.branch_prob(c)).collect(),
                dr: kids.iter().map(|&c| market.dr(c)).collect(),
                coefs: kids.iter().map(|&c| coef[c]).collect(),
            };
            let hs = if market.is_degenerate(s) {
                0.0
            } else {
                let (lo, hi) = market.fraction_bounds(s);
                match search {
                    LineSearch::Golden => {
                        // near the optimum the objective is flat to rounding, so
                        // golden section alone stalls around √ε; polish on the
                        // first-order condition
                        let g = prob.golden(lo, hi);
                        prob.newton(lo, hi, g)
                    }
                    LineSearch::NewtonFrom(h0) => prob.newton(lo, hi, h0),
                }
            };
            let f = prob.value(hs);
            if !f.is_finite() {
                return Err(Error::Solver(format!("node {s}: optimal value {f} is not finite")));
            }
            h[s] = hs;
            coef[s] = if u.is_log() { f } else { f * (1.0 - u.gamma()) };
        }
    }
    let mut rho = vec![1.0; n];
    for s in 0..n {
        if tree.depth(s) > t {
            let p = tree.parent(s).expect("non-root node has a parent");
            rho[s] = rho[p] * (1.0 + h[p] * market.dr(s));
        }
    }
    let mut uval = vec![0.0; n];
    for &m in tree.nodes_at(t) {
        uval[m] = if xi[m] == 0.0 { u.u_at_zero() } else { node_value(u, coef[m], xi[m]) };
    }
    Ok(PrimalSolution { t, xi: xi.to_vec(), h: PredictableControl(h), rho: AdaptedProcess(rho), coef, u: uval })
}
