//! One-step deflator polytopes.
//!
//! At a node with branch probabilities `p_c` and return increments `ΔR_c`,
//! a one-step deflator ratio `q ≥ 0` must satisfy
//! `Σ_c p_c q_c (1 + hΔR_c) ≤ 1` for every admissible fraction `h`. The
//! constraint is linear in `h`, so it suffices to impose it at the extreme
//! fractions `h_min`, `h_max` and at `h = 0`.

use nalgebra::{DMatrix, DVector};

use crate::lattice::{Filtration, TreeMarket};

/// Feasibility slack for vertex enumeration.
const FEAS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct NodePolytope {
    /// Budget rows: `rows[j][c] = p_c (1 + h_j ΔR_c)`, each `≤ 1`.
    rows: Vec<Vec<f64>>,
    fractions: Vec<f64>,
}

impl NodePolytope {
    /// Polytope of the non-terminal `node`.
    pub fn at(market: &TreeMarket, node: usize) -> Self {
        let tree = market.tree();
        let kids = tree.children(node);
        let fractions = if market.is_degenerate(node) {
            vec![0.0]
        } else {
            let (lo, hi) = market.fraction_bounds(node);
            vec![lo, 0.0, hi]
        };
        let rows = fractions
            .iter()
            .map(|&h| kids.iter().map(|&c| tree.branch_prob(c) * (1.0 + h * market.dr(c))).collect())
            .collect();
        Self { rows, fractions }
    }

    pub fn from_parts(probs: &[f64], dr: &[f64], fractions: &[f64]) -> Self {
        let rows = fractions.iter().map(|&h| probs.iter().zip(dr).map(|(p, d)| p * (1.0 + h * d)).collect()).collect();
        Self { rows, fractions: fractions.to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn contains(&self, q: &[f64], tol: f64) -> bool {
        q.iter().all(|&v| v >= -tol) && self.rows.iter().all(|r| dot(r, q) <= 1.0 + tol)
    }

    /// Largest constraint value `Σ p q (1 + hΔR)` over the extreme fractions.
    pub fn budget(&self, q: &[f64]) -> f64 {
        self.rows.iter().map(|r| dot(r, q)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// All vertices, found by solving every square subsystem of active
    /// constraints and keeping the feasible, distinct solutions.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let k = self.dim();
        let m = self.rows.len();
        // constraint i < m: budget row; i ≥ m: q_{i−m} = 0
        let total = m + k;
        let mut out: Vec<Vec<f64>> = Vec::new();
        for subset in combinations(total, k) {
            let mut a = DMatrix::<f64>::zeros(k, k);
            let mut b = DVector::<f64>::zeros(k);
            for (r, &i) in subset.iter().enumerate() {
                if i < m {
                    for c in 0..k {
                        a[(r, c)] = self.rows[i][c];
                    }
                    b[r] = 1.0;
                } else {
                    a[(r, i - m)] = 1.0;
                }
            }
            let Some(x) = a.lu().solve(&b) else { continue };
            let q: Vec<f64> = x.iter().map(|v| if v.abs() < 1e-15 { 0.0 } else { *v }).collect();
            if q.iter().any(|v| !v.is_finite()) || !self.contains(&q, FEAS_TOL) {
                continue;
            }
            if !out.iter().any(|v| v.iter().zip(&q).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()))) {
                out.push(q);
            }
        }
        out
    }

    /// `max_q Σ_c w_c q_c` over the polytope, attained at a vertex.
    pub fn maximize_linear(&self, w: &[f64]) -> (f64, Vec<f64>) {
        self.vertices().into_iter().map(|q| (dot(w, &q), q)).fold((f64::NEG_INFINITY, Vec::new()), |best, cur| {
            if cur.0 > best.0 {
                cur
            } else {
                best
            }
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}
