//! Backward dynamic programming for the dual problem.
//!
//! The dual value function stays in the conjugate family:
//! `B·κ·y^β` with `κ = γ/(1−γ)`, `β = (γ−1)/γ` for power utility and
//! `−log y − 1 + b` for the logarithm. At each node the one-step deflator
//! ratio `q` minimizes `Σ p_c φ_c(q_c)` over the node polytope, where `φ_c`
//! is the child's value function at `y = q_c`.
//!
//! The minimizer sits on the face `Σ p q = 1`, `Σ p q ΔR = 0`. It is found
//! by Newton's method on the concave Lagrangian dual in `(α, β)`, with
//! `q_c = I_c(α + βΔR_c)` and `I_c = (−φ_c′)⁻¹`. A multiplier pair with
//! `α > 0` and `β/α ∈ [h_min, h_max]` certifies optimality over the whole
//! polytope.

use super::polytope::NodePolytope;
use crate::lattice::{AdaptedProcess, Filtration, TreeMarket};
use crate::utility::UtilityField;
use crate::{Error, Result};

/// Dual optimizer and values for start time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub t: usize,
    /// `η` per node; only time-`t` entries are meaningful.
    pub eta: Vec<f64>,
    /// One-step ratio `ẑ_c / ẑ_parent` into every node below depth `t`.
    pub q: Vec<f64>,
    /// `ẑ`, normalized to 1 up to `t`.
    pub z: AdaptedProcess,
    /// Multipliers `(α, β)` of the node problems.
    pub multipliers: Vec<(f64, f64)>,
    /// Value-function coefficient `B` (power) or `b` (log) per node at depth ≥ t.
    pub coef: Vec<f64>,
    /// `v(η, t, T)` per time-`t` node.
    pub v: Vec<f64>,
}

/// `κ = γ/(1−γ)` and `β = (γ−1)/γ`.
pub(crate) fn power_constants(gamma: f64) -> (f64, f64) {
    (gamma / (1.0 - gamma), (gamma - 1.0) / gamma)
}

/// Dual node function with coefficient `coef` at `y > 0`.
pub(crate) fn dual_node_value(u: &UtilityField, coef: f64, y: f64) -> f64 {
    if u.is_log() {
        -y.ln() - 1.0 + coef
    } else {
        let (kappa, beta) = power_constants(u.gamma());
        coef * kappa * y.powf(beta)
    }
}

/// `−∂_y` of the dual node function.
pub(crate) fn dual_node_inverse(u: &UtilityField, coef: f64, y: f64) -> f64 {
    if u.is_log() {
        1.0 / y
    } else {
        coef * y.powf(-1.0 / u.gamma())
    }
}

struct NodeDual<'a> {
    u: &'a UtilityField,
    probs: Vec<f64>,
    dr: Vec<f64>,
    coefs: Vec<f64>,
}

impl NodeDual<'_> {
    /// `q = I(s)`: `(s/B)^{−γ}` or `1/s`.
    fn inverse(&self, c: usize, s: f64) -> f64 {
        if self.u.is_log() {
            1.0 / s
        } else {
            (s / self.coefs[c]).powf(-self.u.gamma())
        }
    }

    /// `1/φ″(q)`.
    fn curvature_inv(&self, c: usize, q: f64) -> f64 {
        if self.u.is_log() {
            q * q
        } else {
            let g = self.u.gamma();
            g / self.coefs[c] * q.powf(1.0 / g + 1.0)
        }
    }

    fn objective(&self, q: &[f64]) -> f64 {
        q.iter().enumerate().map(|(c, &qc)| self.probs[c] * dual_node_value(self.u, self.coefs[c], qc)).sum()
    }

    fn slopes(&self, a: f64, b: f64) -> Option<Vec<f64>> {
        let s: Vec<f64> = self.dr.iter().map(|d| a + b * d).collect();
        s.iter().all(|v| *v > 0.0 && v.is_finite()).then_some(s)
    }

    /// Lagrangian dual `g(α, β)`, its gradient and the ratios `q`.
    fn lagrangian(&self, s: &[f64], a: f64) -> (f64, [f64; 2], Vec<f64>) {
        let q: Vec<f64> = s.iter().enumerate().map(|(c, &sc)| self.inverse(c, sc)).collect();
        let mut g = -a;
        let (mut g0, mut g1) = (-1.0, 0.0);
        for c in 0..q.len() {
            let p = self.probs[c];
            g += p * (dual_node_value(self.u, self.coefs[c], q[c]) + s[c] * q[c]);
            g0 += p * q[c];
            g1 += p * q[c] * self.dr[c];
        }
        (g, [g0, g1], q)
    }

    /// Maximizes `g` over `(α, β)`; `β` is held at 0 on degenerate nodes.
    fn solve(&self, degenerate: bool) -> Result<(f64, f64, Vec<f64>)> {
        let (mut a, mut b) = (1.0, 0.0);
        let mut s = self.slopes(a, b).expect("α = 1, β = 0 is interior");
        let (mut g, mut grad, mut q) = self.lagrangian(&s, a);
        for _ in 0..500 {
            let scale = self.dr.iter().fold(0.0f64, |m, d| m.max(d.abs())).max(1e-300);
            if grad[0].abs() <= 1e-15 && (degenerate || grad[1].abs() <= 1e-15 * scale) {
                break;
            }
            // Hessian −Σ p k [1 ΔR; ΔR ΔR²]
            let (mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0);
            for c in 0..q.len() {
                let k = self.probs[c] * self.curvature_inv(c, q[c]);
                h00 += k;
                h01 += k * self.dr[c];
                h11 += k * self.dr[c] * self.dr[c];
            }
            let (da, db) = if degenerate {
                (grad[0] / h00, 0.0)
            } else {
                let det = h00 * h11 - h01 * h01;
                if !(det > 0.0) {
                    return Err(Error::Solver(format!("singular dual Hessian (det {det:e})")));
                }
                ((h11 * grad[0] - h01 * grad[1]) / det, (h00 * grad[1] - h01 * grad[0]) / det)
            };
            let mut step = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let (na, nb) = (a + step * da, b + step * db);
                if let Some(ns) = self.slopes(na, nb) {
                    let (ng, ngrad, nq) = self.lagrangian(&ns, na);
                    if ng >= g - 1e-15 * g.abs().max(1.0) {
                        moved = (na, nb) != (a, b);
                        (a, b, s, g, grad, q) = (na, nb, ns, ng, ngrad, nq);
                        break;
                    }
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        let _ = s;
        let scale = self.dr.iter().fold(0.0f64, |m, d| m.max(d.abs())).max(1e-300);
        if grad[0].abs() > 1e-12 || (!degenerate && grad[1].abs() > 1e-12 * scale) {
            return Err(Error::Solver(format!(
                "dual node problem did not converge (residuals {:e}, {:e})",
                grad[0], grad[1]
            )));
        }
        Ok((a, b, q))
    }
}

/// Solves the dual problem from depth `t` for the per-node `η` (only
/// time-`t` entries are read).
pub fn solve_dual(market: &TreeMarket, u: &UtilityField, eta: &[f64], t: usize) -> Result<DualSolution> {
    let tree = market.tree();
    let n = tree.len();
    if eta.len() != n {
        return Err(Error::ShapeMismatch(format!("η has {} entries for {n} nodes", eta.len())));
    }
    if t > tree.n_periods() {
        return Err(Error::Precondition(format!("start depth {t} beyond {} periods", tree.n_periods())));
    }
    for &m in tree.nodes_at(t) {
        if !(eta[m] >= 0.0) || !eta[m].is_finite() {
            return Err(Error::Domain(format!("η at node {m} must be finite and nonnegative (got {})", eta[m])));
        }
    }
    let mut coef = vec![0.0; n];
    let mut q = vec![1.0; n];
    let mut multipliers = vec![(0.0, 0.0); n];
    for &l in tree.leaves() {
        coef[l] = if u.is_log() { 0.0 } else { u.weight(l)?.powf(1.0 / u.gamma()) };
    }
    for depth in (t..tree.n_periods()).rev() {
        for &s in tree.nodes_at(depth) {
            let kids = tree.children(s);
            let node = NodeDual {
                u,
                probs: kids.iter().map(|&c| tree.branch_prob(c)).collect(),
                dr: kids.iter().map(|&c| market.dr(c)).collect(),
                coefs: kids.iter().map(|&c| coef[c]).collect(),
            };
            let degenerate = market.is_degenerate(s);
            let (a, b, qs) = node.solve(degenerate).map_err(|e| Error::Solver(format!("node {s}: {e}")))?;
            if !degenerate {
                let (lo, hi) = market.fraction_bounds(s);
                let ratio = b / a;
                if !(a > 0.0) || ratio < lo - 1e-9 * (1.0 + lo.abs()) || ratio > hi + 1e-9 * (1.0 + hi.abs()) {
                    return Err(Error::Solver(format!(
                        "node {s}: multipliers (α = {a}, β = {b}) do not certify optimality on [{lo}, {hi}]"
                    )));
                }
            }
            let poly = NodePolytope::at(market, s);
            if !poly.contains(&qs, 1e-12) {
                return Err(Error::Solver(format!("node {s}: deflator ratio leaves the polytope")));
            }
            let min = node.objective(&qs);
            coef[s] = if u.is_log() { min + 1.0 } else { min / power_constants(u.gamma()).0 };
            multipliers[s] = (a, b);
            for (&c, &qc) in kids.iter().zip(&qs) {
                q[c] = qc;
            }
        }
    }
    let mut z = vec![1.0; n];
    for s in 0..n {
        if tree.depth(s) > t {
            let p = tree.parent(s).expect("non-root node has a parent");
            z[s] = z[p] * q[s];
        } else {
            q[s] = 1.0;
        }
    }
    let mut v = vec![0.0; n];
    for &m in tree.nodes_at(t) {
        v[m] = if eta[m] == 0.0 { u.conjugate().v_at_zero() } else { dual_node_value(u, coef[m], eta[m]) };
    }
    Ok(DualSolution { t, eta: eta.to_vec(), q, z: AdaptedProcess(z), multipliers, coef, v })
}

impl DualSolution {
    /// `η̂` with `−∂_η v(η̂) = ξ` at time-`t` node `m`.
    pub fn conjugate_point(&self, u: &UtilityField, m: usize, xi: f64) -> f64 {
        if u.is_log() {
            1.0 / xi
        } else {
            (xi / self.coef[m]).powf(-u.gamma())
        }
    }

    /// `−∂_η v(η, t, T)` at time-`t` node `m`.
    pub fn inverse_marginal(&self, u: &UtilityField, m: usize, eta: f64) -> f64 {
        dual_node_inverse(u, self.coef[m], eta)
    }
}
