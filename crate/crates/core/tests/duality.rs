use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use utilab_core::duality::{
    check_conjugacy, check_optimality_relations, check_polarity, check_weak_duality, solve_dual, solve_duality,
    solve_primal, supermartingale_excess, LineSearch, NodePolytope,
};
use utilab_core::lattice::{samples, AdaptedProcess, Filtration, TimeGrid, TreeBuilder, TreeMarket};
use utilab_core::utility::UtilityField;

fn market(model: &utilab_core::lattice::MarketModel<utilab_core::lattice::FiltrationTree>) -> TreeMarket {
    TreeMarket::from_model(model).unwrap()
}

fn binomial3() -> TreeMarket {
    market(&samples::binomial(3, 1.0, 0.2, 1.75).unwrap())
}

fn trinomial2() -> TreeMarket {
    market(&samples::trinomial(2, 1.0, 0.2, 1.75).unwrap())
}

fn families() -> Vec<UtilityField> {
    vec![UtilityField::crra(0.5).unwrap(), UtilityField::crra(2.0).unwrap(), UtilityField::Log]
}

/// Risk-neutral density of a complete binomial tree from the two-point
/// martingale condition, independent of the dual solver.
fn binomial_density(m: &TreeMarket) -> Vec<f64> {
    let tree = m.tree();
    let mut z = vec![1.0; tree.len()];
    for s in 0..tree.len() {
        let kids = tree.children(s);
        if kids.is_empty() {
            continue;
        }
        let (u, d) = (kids[0], kids[1]);
        let (ru, rd) = (m.dr(u), m.dr(d));
        let qu = rd / (rd - ru);
        z[u] = z[s] * qu / tree.branch_prob(u);
        z[d] = z[s] * (1.0 - qu) / tree.branch_prob(d);
    }
    z
}

#[test]
fn complete_binomial_primal_matches_martingale_method() {
    let m = binomial3();
    let tree = m.tree();
    let gamma = 2.0;
    let u = UtilityField::crra(gamma).unwrap();
    let z = binomial_density(&m);
    let leaves: Vec<(usize, f64)> = tree.leaves_below(0);
    for xi0 in [0.5, 1.0, 3.0] {
        // budget E[Z I(yZ)] = ξ with I(y) = y^{−1/γ}
        let ez: f64 = leaves.iter().map(|&(l, p)| p * z[l].powf(1.0 - 1.0 / gamma)).sum();
        let y = (xi0 / ez).powf(-gamma);
        let oracle: f64 = leaves.iter().map(|&(l, p)| p * u.u_eval((y * z[l]).powf(-1.0 / gamma), l).unwrap()).sum();
        let mut xi = vec![0.0; tree.len()];
        xi[0] = xi0;
        let s = solve_primal(&m, &u, &xi, 0, LineSearch::Golden).unwrap();
        assert!((s.u[0] - oracle).abs() < 1e-10 * oracle.abs(), "{} vs {oracle}", s.u[0]);
    }
}

#[test]
fn complete_binomial_dual_is_risk_neutral_value() {
    let m = binomial3();
    let tree = m.tree();
    let z = binomial_density(&m);
    for u in families() {
        let eta = vec![0.8; tree.len()];
        let d = solve_dual(&m, &u, &eta, 0).unwrap();
        let oracle: f64 =
            tree.leaves_below(0).iter().map(|&(l, p)| p * u.conjugate().v_eval(0.8 * z[l], l).unwrap()).sum();
        assert!((d.v[0] - oracle).abs() < 1e-12 * oracle.abs().max(1.0));
        for &l in tree.leaves() {
            assert!((d.z[l] - z[l]).abs() < 1e-12 * z[l]);
        }
    }
}

/// Brute-force minimum of `Σ p_c V(η q_c)` over the deflator polytope of a
/// one-period trinomial: a grid over `(q₁, q₂)` with `q₃` as large as the
/// budget rows allow (`V` is decreasing), refined by zooming.
fn brute_force_dual(probs: &[f64; 3], dr: &[f64; 3], u: &UtilityField, eta: f64) -> f64 {
    let v = u.conjugate();
    let (lo, hi) = (-1.0 / dr[0], -1.0 / dr[2]);
    let poly = NodePolytope::from_parts(probs, dr, &[lo, 0.0, hi]);
    let rows: Vec<[f64; 3]> = [lo, 0.0, hi]
        .iter()
        .map(|&h| [probs[0] * (1.0 + h * dr[0]), probs[1] * (1.0 + h * dr[1]), probs[2] * (1.0 + h * dr[2])])
        .collect();
    let value = |q1: f64, q2: f64| -> f64 {
        let q3 = rows.iter().map(|r| (1.0 - r[0] * q1 - r[1] * q2) / r[2]).fold(f64::INFINITY, f64::min);
        if q1 <= 0.0 || q2 <= 0.0 || q3 <= 0.0 || !poly.contains(&[q1, q2, q3], 1e-12) {
            return f64::INFINITY;
        }
        probs[0] * v.v_eval(eta * q1, 0).unwrap()
            + probs[1] * v.v_eval(eta * q2, 0).unwrap()
            + probs[2] * v.v_eval(eta * q3, 0).unwrap()
    };
    let (mut c1, mut c2, mut w) = (2.0, 2.0, 2.0);
    let mut best = f64::INFINITY;
    for _ in 0..80 {
        let n = 60;
        let (mut b1, mut b2) = (c1, c2);
        for i in 0..=n {
            for j in 0..=n {
                let q1 = c1 - w + 2.0 * w * i as f64 / n as f64;
                let q2 = c2 - w + 2.0 * w * j as f64 / n as f64;
                let f = value(q1, q2);
                if f < best {
                    best = f;
                    b1 = q1;
                    b2 = q2;
                }
            }
        }
        c1 = b1;
        c2 = b2;
        w *= 0.5;
    }
    best
}

#[test]
fn incomplete_trinomial_dual_matches_brute_force() {
    let probs = [0.3, 0.45, 0.25];
    let dr = [0.06, 0.004, -0.05];
    let mut b = TreeBuilder::new(TimeGrid::uniform(1.0, 1).unwrap());
    for p in probs {
        b.add_child(0, p);
    }
    let tree = b.build().unwrap();
    let m = TreeMarket::new(tree, AdaptedProcess(vec![0.0, dr[0], dr[1], dr[2]])).unwrap();
    for u in [UtilityField::crra(2.0).unwrap(), UtilityField::crra(0.5).unwrap(), UtilityField::Log] {
        let eta = 1.2;
        let d = solve_dual(&m, &u, &[eta, 0.0, 0.0, 0.0], 0).unwrap();
        let oracle = brute_force_dual(&probs, &dr, &u, eta);
        // the solver may only beat the grid, and by no more than its resolution
        assert!(d.v[0] <= oracle + 1e-12, "{u:?}: {} vs {oracle}", d.v[0]);
        assert!((d.v[0] - oracle).abs() < 1e-7 * oracle.abs().max(1.0), "{u:?}: {} vs {oracle}", d.v[0]);
    }
}

#[test]
fn weak_duality_on_random_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..15 {
        let m = market(&samples::random_market(seed, 1 + (seed as usize % 3), 3).unwrap());
        let n = m.tree().len();
        for u in families() {
            for _ in 0..3 {
                let xi: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0f64..2.0).exp()).collect();
                let eta: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0f64..2.0).exp()).collect();
                let t = rng.random_range(0..=m.tree().n_periods());
                let r = check_weak_duality(&m, &u, &xi, &eta, t, 1e-8).unwrap();
                assert!(r.passed(), "seed {seed} {u:?}: {}", r.max_gap);
            }
        }
    }
}

#[test]
fn weak_duality_is_tight_at_the_conjugate_point() {
    let m = trinomial2();
    let n = m.tree().len();
    for u in families() {
        let xi = vec![1.4; n];
        let sol = solve_duality(&m, &u, &xi, 1).unwrap();
        let r = check_weak_duality(&m, &u, &xi, &sol.eta_hat, 1, 1e-8).unwrap();
        for g in r.gaps {
            assert!(g.abs() < 1e-6, "{u:?}: {g}");
        }
    }
}

#[test]
fn zero_xi_with_low_risk_aversion() {
    let m = binomial3();
    let n = m.tree().len();
    let u = UtilityField::crra(0.5).unwrap();
    let r = check_weak_duality(&m, &u, &vec![0.0; n], &vec![1.0; n], 0, 1e-8).unwrap();
    assert!(r.passed());
    assert!(r.gaps[0] < 0.0);
}

#[test]
fn conjugacy_on_complete_and_incomplete_trees() {
    for (m, tol) in [(binomial3(), 1e-6), (trinomial2(), 1e-5)] {
        let n = m.tree().len();
        for u in families() {
            for t in [0, 1] {
                let r = check_conjugacy(&m, &u, t, &vec![1.3; n], &vec![0.7; n], tol).unwrap();
                assert!(r.passed(), "{u:?} t = {t}: {:?}", r.nodes);
            }
        }
    }
}

#[test]
fn terminal_conjugacy_is_fenchel_young() {
    let m = trinomial2();
    let n = m.tree().len();
    let t = m.tree().n_periods();
    let u = UtilityField::crra(2.0).unwrap();
    let xi = vec![1.3; n];
    let p = solve_primal(&m, &u, &xi, t, LineSearch::Golden).unwrap();
    for &l in m.tree().leaves() {
        assert_eq!(p.u[l], u.u_eval(1.3, l).unwrap());
    }
    let r = check_conjugacy(&m, &u, t, &xi, &vec![0.7; n], 1e-9).unwrap();
    assert!(r.passed(), "{:?}", r.nodes);
}

#[test]
fn optimality_relations_and_maximality() {
    for m in [binomial3(), trinomial2()] {
        let n = m.tree().len();
        for u in families() {
            for t in [0, 1] {
                let mut xi = vec![0.0; n];
                for (k, &node) in m.tree().nodes_at(t).iter().enumerate() {
                    // one node with ξ = 0 when there are several
                    xi[node] = if k == 1 { 0.0 } else { 0.5 + k as f64 };
                }
                let sol = solve_duality(&m, &u, &xi, t).unwrap();
                let r = check_optimality_relations(&m, &u, &sol, 1e-6, 1e-8).unwrap();
                assert!(r.passed(), "{u:?} t = {t}: {r:?}");
            }
        }
    }
}

#[test]
fn primal_unique_across_initializations() {
    let m = market(&samples::random_market(7, 3, 3).unwrap());
    let n = m.tree().len();
    for u in families() {
        let a = solve_primal(&m, &u, &vec![1.0; n], 0, LineSearch::Golden).unwrap();
        for h0 in [-1e3, 0.0, 1e3] {
            let b = solve_primal(&m, &u, &vec![1.0; n], 0, LineSearch::NewtonFrom(h0)).unwrap();
            for s in 0..n {
                assert!((a.rho[s] - b.rho[s]).abs() < 1e-8, "{u:?} h0 = {h0}: {} vs {}", a.rho[s], b.rho[s]);
            }
        }
    }
}

#[test]
fn value_functions_along_rays() {
    let m = trinomial2();
    let n = m.tree().len();
    for u in families() {
        let at = |c: f64| solve_primal(&m, &u, &vec![c; n], 1, LineSearch::Golden).unwrap().u;
        let dual_at = |c: f64| solve_dual(&m, &u, &vec![c; n], 1).unwrap().v;
        let (a, b, c) = (at(0.5), at(1.0), at(1.5));
        let (x, y, z) = (dual_at(0.5), dual_at(1.0), dual_at(1.5));
        for &s in m.tree().nodes_at(1) {
            assert!(a[s] < b[s] && b[s] < c[s]);
            assert!(b[s] >= 0.5 * (a[s] + c[s]));
            assert!(x[s] > y[s] && y[s] > z[s]);
            assert!(y[s] <= 0.5 * (x[s] + z[s]));
        }
    }
}

#[test]
fn optimal_deflator_is_a_supermartingale_deflator() {
    for seed in 0..5 {
        let m = market(&samples::random_market(seed, 3, 3).unwrap());
        let n = m.tree().len();
        for u in families() {
            let sol = solve_duality(&m, &u, &vec![1.0; n], 0).unwrap();
            let excess = supermartingale_excess(&m, sol.z(), 0, 50, seed);
            assert!(excess <= 1e-10, "{excess}");
        }
    }
}

#[test]
fn polarity() {
    for m in [binomial3(), trinomial2(), market(&samples::random_market(3, 2, 3).unwrap())] {
        for t in [0, 1] {
            let r = check_polarity(&m, t, 30, 5, 1e-10).unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }
}

#[test]
fn oversized_trees_rejected() {
    let m = market(&samples::binomial(6, 1.0, 0.2, 1.0).unwrap());
    let n = m.tree().len();
    assert!(solve_duality(&m, &UtilityField::Log, &vec![1.0; n], 0).is_err());
}
