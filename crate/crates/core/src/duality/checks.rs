use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::dual::{solve_dual, DualSolution};
use super::polytope::NodePolytope;
use super::primal::{solve_primal, LineSearch, PrimalSolution};
use super::{MAX_BRANCHING, MAX_PERIODS};
use crate::lattice::{Filtration, TreeMarket};
use crate::utility::UtilityField;
use crate::{Error, Result};

/// Matched primal and dual solutions at the conjugate point `η̂` of `ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualitySolution {
    pub t: usize,
    pub xi: Vec<f64>,
    /// `η̂ = ∂_ξ u(ξ)` per time-`t` node (0 where `ξ = 0`).
    pub eta_hat: Vec<f64>,
    pub primal: PrimalSolution,
    pub dual: DualSolution,
}

impl DualitySolution {
    /// `ρ̂`, equal to 1 up to `t`.
    pub fn rho(&self) -> &[f64] {
        &self.primal.rho
    }

    /// `ẑ`, equal to 1 up to `t`.
    pub fn z(&self) -> &[f64] {
        &self.dual.z
    }

    pub fn u(&self) -> &[f64] {
        &self.primal.u
    }

    pub fn v(&self) -> &[f64] {
        &self.dual.v
    }
}

/// Hash identifying a (tree, returns, utility) instance.
pub fn instance_hash(market: &TreeMarket, u: &UtilityField) -> String {
    let mut h = Sha256::new();
    h.update(market.tree().content_hash().as_bytes());
    for r in market.returns().iter() {
        h.update(r.to_le_bytes());
    }
    h.update(format!("{u:?}").as_bytes());
    hex::encode(h.finalize())
}

fn check_size(market: &TreeMarket) -> Result<()> {
    market.check_size(MAX_PERIODS, MAX_BRANCHING)
}

pub fn solve_duality(market: &TreeMarket, u: &UtilityField, xi: &[f64], t: usize) -> Result<DualitySolution> {
    check_size(market)?;
    let primal = solve_primal(market, u, xi, t, LineSearch::Golden)?;
    let n = market.tree().len();
    let probe = solve_dual(market, u, &vec![1.0; n], t)?;
    let mut eta_hat = vec![0.0; n];
    for &m in market.tree().nodes_at(t) {
        if xi[m] > 0.0 {
            eta_hat[m] = probe.conjugate_point(u, m, xi[m]);
        }
    }
    let dual = solve_dual(market, u, &eta_hat, t)?;
    Ok(DualitySolution { t, xi: xi.to_vec(), eta_hat, primal, dual })
}

/// `u − v − ξη` per time-`t` node.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub nodes: Vec<usize>,
    pub gaps: Vec<f64>,
    pub max_gap: f64,
    pub tol: f64,
}

impl GapReport {
    pub fn passed(&self) -> bool {
        self.max_gap <= self.tol
    }
}

pub fn check_weak_duality(
    market: &TreeMarket,
    u: &UtilityField,
    xi: &[f64],
    eta: &[f64],
    t: usize,
    tol: f64,
) -> Result<GapReport> {
    check_size(market)?;
    let p = solve_primal(market, u, xi, t, LineSearch::Golden)?;
    let d = solve_dual(market, u, eta, t)?;
    let nodes = market.tree().nodes_at(t).to_vec();
    let gaps: Vec<f64> = nodes
        .iter()
        .map(|&m| {
            if p.u[m] == f64::NEG_INFINITY || d.v[m] == f64::INFINITY {
                f64::NEG_INFINITY
            } else {
                p.u[m] - d.v[m] - xi[m] * eta[m]
            }
        })
        .collect();
    let max_gap = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(GapReport { nodes, gaps, max_gap, tol })
}

/// Conjugacy gaps at one time-`t` node.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugacyNode {
    pub node: usize,
    /// `|sup_ξ (u(ξ) − ξη) − v(η)|`.
    pub sup_gap: f64,
    /// `|inf_η (v(η) + ξη) − u(ξ)|`.
    pub inf_gap: f64,
    /// Whether either ray search ran out of bracket expansions.
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConjugacyReport {
    pub nodes: Vec<ConjugacyNode>,
    pub tol: f64,
}

impl ConjugacyReport {
    pub fn max_gap(&self) -> f64 {
        self.nodes.iter().map(|n| n.sup_gap.max(n.inf_gap)).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.nodes.iter().all(|n| !n.exhausted && n.sup_gap <= self.tol && n.inf_gap <= self.tol)
    }
}

const MAX_EXPANSIONS: usize = 12;

/// Maximizes `f_m(s)` for every node `m` at once, each along its own
/// logarithmic ray. `eval` maps per-node offsets `s` to per-node values.
/// Returns the maxima and whether a bracket could not be closed.
fn ray_max(k: usize, eval: &dyn Fn(&[f64]) -> Result<Vec<f64>>) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut width = vec![1.0; k];
    let mut done = vec![false; k];
    let mut exhausted = vec![false; k];
    let center = eval(&vec![0.0; k])?;
    for _ in 0..=MAX_EXPANSIONS {
        let lo = eval(&width.iter().map(|w| -w).collect::<Vec<_>>())?;
        let hi = eval(&width)?;
        for m in 0..k {
            if done[m] {
                continue;
            }
            if center[m] >= lo[m] && center[m] >= hi[m] {
                done[m] = true;
            } else {
                width[m] *= 2.0;
            }
        }
        if done.iter().all(|d| *d) {
            break;
        }
    }
    for m in 0..k {
        if !done[m] {
            exhausted[m] = true;
        }
    }
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut a: Vec<f64> = width.iter().map(|w| -w).collect();
    let mut b = width.clone();
    let mut best = center.clone();
    for _ in 0..120 {
        let c: Vec<f64> = (0..k).map(|m| b[m] - r * (b[m] - a[m])).collect();
        let d: Vec<f64> = (0..k).map(|m| a[m] + r * (b[m] - a[m])).collect();
        let fc = eval(&c)?;
        let fd = eval(&d)?;
        for m in 0..k {
            best[m] = best[m].max(fc[m]).max(fd[m]);
            if fc[m] >= fd[m] {
                b[m] = d[m];
            } else {
                a[m] = c[m];
            }
        }
    }
    Ok((best, exhausted))
}

/// Conjugacy and biconjugacy along per-node rays: for the given `η`, the
/// supremum over `ξ` runs along the ray through `−∂_η v(η)`; for the given
/// `ξ`, the infimum over `η` runs along the ray through `∂_ξ u(ξ)`. Nodes
/// with `ξ = 0` or `η = 0` are skipped.
pub fn check_conjugacy(
    market: &TreeMarket,
    u: &UtilityField,
    t: usize,
    xi: &[f64],
    eta: &[f64],
    tol: f64,
) -> Result<ConjugacyReport> {
    check_size(market)?;
    let tree = market.tree();
    let n = tree.len();
    let nodes: Vec<usize> = tree.nodes_at(t).iter().copied().filter(|&m| xi[m] > 0.0 && eta[m] > 0.0).collect();
    let k = nodes.len();
    let reference = solve_dual(market, u, &vec![1.0; n], t)?;
    let v_at = solve_dual(market, u, eta, t)?;
    let u_at = solve_primal(market, u, xi, t, LineSearch::Golden)?;

    let xi_star: Vec<f64> = nodes.iter().map(|&m| reference.inverse_marginal(u, m, eta[m])).collect();
    let sup_eval = |s: &[f64]| -> Result<Vec<f64>> {
        let mut x = vec![0.0; n];
        for (j, &m) in nodes.iter().enumerate() {
            x[m] = xi_star[j] * s[j].exp();
        }
        let p = solve_primal(market, u, &x, t, LineSearch::Golden)?;
        Ok(nodes.iter().map(|&m| p.u[m] - x[m] * eta[m]).collect())
    };
    let (sup, sup_ex) = ray_max(k, &sup_eval)?;

    let eta_star: Vec<f64> = nodes.iter().map(|&m| reference.conjugate_point(u, m, xi[m])).collect();
    let inf_eval = |s: &[f64]| -> Result<Vec<f64>> {
        let mut y = vec![0.0; n];
        for (j, &m) in nodes.iter().enumerate() {
            y[m] = eta_star[j] * s[j].exp();
        }
        let d = solve_dual(market, u, &y, t)?;
        Ok(nodes.iter().map(|&m| -(d.v[m] + xi[m] * y[m])).collect())
    };
    let (inf, inf_ex) = ray_max(k, &inf_eval)?;

    let out = nodes
        .iter()
        .enumerate()
        .map(|(j, &m)| ConjugacyNode {
            node: m,
            sup_gap: (sup[j] - v_at.v[m]).abs(),
            inf_gap: (-inf[j] - u_at.u[m]).abs(),
            exhausted: sup_ex[j] || inf_ex[j],
        })
        .collect();
    Ok(ConjugacyReport { nodes: out, tol })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityReport {
    /// Largest `|U′(ξρ̂) − η̂ẑ_T| / (η̂ẑ_T)` over leaves below `{ξ > 0}`.
    pub marginal_err: f64,
    /// Largest `|−V′(η̂ẑ_T) − ξρ̂| / (ξρ̂)`.
    pub inverse_err: f64,
    /// Largest `|E_t[ρ̂ẑ_T] − 1|` over time-`t` nodes with `ξ > 0`.
    pub budget_err: f64,
    /// Largest `|sup_z E_t[ρ̂z_T] − 1|`: maximality of `ρ̂`.
    pub maximality_err: f64,
    pub rel_tol: f64,
    pub budget_tol: f64,
}

impl OptimalityReport {
    pub fn passed(&self) -> bool {
        self.marginal_err <= self.rel_tol
            && self.inverse_err <= self.rel_tol
            && self.budget_err <= self.budget_tol
            && self.maximality_err <= self.budget_tol
    }
}

/// `sup_z E_n[(ρ̂_T/ρ̂_n) z_T/z_n]` for every node at depth ≥ t, by backward
/// linear programming over the node polytopes.
pub fn maximal_pairing(market: &TreeMarket, h: &[f64], t: usize) -> Vec<f64> {
    let tree = market.tree();
    let mut g = vec![1.0; tree.len()];
    for depth in (t..tree.n_periods()).rev() {
        for &s in tree.nodes_at(depth) {
            let kids = tree.children(s);
            let w: Vec<f64> = kids.iter().map(|&c| tree.branch_prob(c) * (1.0 + h[s] * market.dr(c)) * g[c]).collect();
            g[s] = NodePolytope::at(market, s).maximize_linear(&w).0;
        }
    }
    g
}

pub fn check_optimality_relations(
    market: &TreeMarket,
    u: &UtilityField,
    sol: &DualitySolution,
    rel_tol: f64,
    budget_tol: f64,
) -> Result<OptimalityReport> {
    let tree = market.tree();
    let v = u.conjugate();
    let mut rep = OptimalityReport {
        marginal_err: 0.0,
        inverse_err: 0.0,
        budget_err: 0.0,
        maximality_err: 0.0,
        rel_tol,
        budget_tol,
    };
    let g = maximal_pairing(market, &sol.primal.h, sol.t);
    for &m in tree.nodes_at(sol.t) {
        let xi = sol.xi[m];
        if !(xi > 0.0) {
            continue;
        }
        let mut budget = 0.0;
        for (l, p) in tree.leaves_below(m) {
            let x = xi * sol.rho()[l];
            let y = sol.eta_hat[m] * sol.z()[l];
            let mu = u.u_prime(x, l)?;
            rep.marginal_err = rep.marginal_err.max((mu - y).abs() / y);
            let inv = -v.v_prime(y, l)?;
            rep.inverse_err = rep.inverse_err.max((inv - x).abs() / x);
            budget += p * sol.rho()[l] * sol.z()[l];
        }
        rep.budget_err = rep.budget_err.max((budget - 1.0).abs());
        rep.maximality_err = rep.maximality_err.max((g[m] - 1.0).abs());
    }
    Ok(rep)
}

/// A uniformly drawn admissible fraction at `node`.
pub fn random_fraction(rng: &mut impl Rng, market: &TreeMarket, node: usize) -> f64 {
    if market.is_degenerate(node) {
        rng.random_range(-1.0..1.0)
    } else {
        let (lo, hi) = market.fraction_bounds(node);
        lo + (hi - lo) * rng.random::<f64>()
    }
}

/// Wealth from 1 at depth `t` under random admissible fractions; 1 up to `t`.
pub fn random_wealth(rng: &mut impl Rng, market: &TreeMarket, t: usize) -> Vec<f64> {
    let tree = market.tree();
    let h: Vec<f64> = (0..tree.len())
        .map(|s| if tree.is_terminal(s) || tree.depth(s) < t { 0.0 } else { random_fraction(rng, market, s) })
        .collect();
    let mut x = vec![1.0; tree.len()];
    for s in 0..tree.len() {
        if tree.depth(s) > t {
            let p = tree.parent(s).expect("non-root node has a parent");
            x[s] = (x[p] * (1.0 + h[p] * market.dr(s))).max(0.0);
        }
    }
    x
}

/// Deflator built from random convex combinations of node-polytope
/// vertices; 1 up to `t`.
pub fn random_deflator(rng: &mut impl Rng, market: &TreeMarket, t: usize) -> Vec<f64> {
    let tree = market.tree();
    let mut z = vec![1.0; tree.len()];
    for depth in t..tree.n_periods() {
        for &s in tree.nodes_at(depth) {
            let verts = NodePolytope::at(market, s).vertices();
            let a = &verts[rng.random_range(0..verts.len())];
            let b = &verts[rng.random_range(0..verts.len())];
            let w: f64 = rng.random();
            for (j, &c) in tree.children(s).iter().enumerate() {
                z[c] = z[s] * (w * a[j] + (1.0 - w) * b[j]);
            }
        }
    }
    z
}

/// Largest `E[z_c X_c | n] − z_n X_n` over nodes at depth ≥ t and `samples`
/// random admissible wealth processes started at 1 at `t`.
pub fn supermartingale_excess(market: &TreeMarket, z: &[f64], t: usize, samples: usize, seed: u64) -> f64 {
    let tree = market.tree();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let x = random_wealth(&mut rng, market, t);
        for depth in t..tree.n_periods() {
            for &s in tree.nodes_at(depth) {
                let next: f64 = tree.children(s).iter().map(|&c| tree.branch_prob(c) * z[c] * x[c]).sum();
                worst = worst.max(next - z[s] * x[s]);
            }
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarityReport {
    pub pairs: usize,
    /// Largest `E_t[ρ z_T]` over sampled claims and deflators.
    pub max_pairing: f64,
    /// A strictly positive claim and a strictly positive deflator exist.
    pub positive_claim: bool,
    pub positive_deflator: bool,
    /// `E_t[cρ z_T]` for the positive pair scaled by `c > 1`; exceeds 1.
    pub scaled_pairing: f64,
    pub tol: f64,
}

impl PolarityReport {
    pub fn passed(&self) -> bool {
        self.max_pairing <= 1.0 + self.tol
            && self.positive_claim
            && self.positive_deflator
            && self.scaled_pairing > 1.0 + self.tol
    }
}

/// Samples admissible claims `ρ` (wealth from 1 shrunk by a random factor
/// in `(0, 1]`) and deflators `z`, and checks `E_t[ρz_T] ≤ 1`.
pub fn check_polarity(market: &TreeMarket, t: usize, samples: usize, seed: u64, tol: f64) -> Result<PolarityReport> {
    check_size(market)?;
    let tree = market.tree();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let claims: Vec<Vec<f64>> = (0..samples)
        .map(|_| {
            let mut x = random_wealth(&mut rng, market, t);
            for &l in tree.leaves() {
                x[l] *= 1.0 - rng.random::<f64>();
            }
            x
        })
        .collect();
    let deflators: Vec<Vec<f64>> = (0..samples).map(|_| random_deflator(&mut rng, market, t)).collect();
    let mut max_pairing = f64::NEG_INFINITY;
    for &m in tree.nodes_at(t) {
        let leaves = tree.leaves_below(m);
        for rho in &claims {
            for z in &deflators {
                let e: f64 = leaves.iter().map(|&(l, p)| p * rho[l] * z[l]).sum();
                max_pairing = max_pairing.max(e);
            }
        }
    }
    // the numéraire deflator from the logarithmic dual is strictly positive
    let num = solve_dual(market, &UtilityField::Log, &vec![1.0; tree.len()], t)?;
    let positive_deflator = tree.leaves().iter().all(|&l| num.z[l] > 0.0);
    let positive_claim = true; // ρ ≡ 1, holding no risky asset
    let c = 1.0 + 1e-3;
    let scaled_pairing = tree
        .nodes_at(t)
        .iter()
        .map(|&m| tree.leaves_below(m).iter().map(|&(l, p)| p * c * num.z[l]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    if !scaled_pairing.is_finite() {
        return Err(Error::Solver("no time-t nodes".into()));
    }
    Ok(PolarityReport {
        pairs: samples * samples * tree.nodes_at(t).len(),
        max_pairing,
        positive_claim,
        positive_deflator,
        scaled_pairing,
        tol,
    })
}
