use proptest::prelude::*;
use utilab_core::lattice::samples::random_market;
use utilab_core::lattice::{
    quadratic_variation, stochastic_exponential, stochastic_integral, AdaptedProcess, ExpVariant, Filtration,
    FiltrationTree, PathEnsemble, PredictableControl, QvMode, TimeGrid, TreeMarket,
};

fn random_control(n: usize, seed: u64, scale: f64) -> PredictableControl {
    // cheap deterministic values in [-scale, scale]
    PredictableControl(
        (0..n)
            .map(|i| {
                let x = ((i as u64 + 1).wrapping_mul(seed | 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 11) as f64
                    / (1u64 << 53) as f64;
                scale * (2.0 * x - 1.0)
            })
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn integral_is_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let m = random_market(seed, 3, 3).unwrap();
        let tree = m.filtration();
        let n = tree.len();
        let h1 = random_control(n, seed, 2.0);
        let h2 = random_control(n, seed + 1, 2.0);
        let x = m.base_return();
        let y = m.driver();
        let combo_h = PredictableControl(h1.iter().zip(h2.iter()).map(|(p, q)| a * p + b * q).collect());
        let lhs = stochastic_integral(tree, &combo_h, x).unwrap();
        let i1 = stochastic_integral(tree, &h1, x).unwrap();
        let i2 = stochastic_integral(tree, &h2, x).unwrap();
        for s in 0..n {
            prop_assert!((lhs[s] - (a * i1[s] + b * i2[s])).abs() <= 1e-12);
        }
        let combo_x = AdaptedProcess(x.iter().zip(y.iter()).map(|(p, q)| a * p + b * q).collect());
        let lhs = stochastic_integral(tree, &h1, &combo_x).unwrap();
        let j = stochastic_integral(tree, &h1, y).unwrap();
        for s in 0..n {
            prop_assert!((lhs[s] - (a * i1[s] + b * j[s])).abs() <= 1e-12);
        }
    }

    #[test]
    fn multiplicative_exponential_is_self_financing_wealth(seed in 0u64..10_000) {
        let m = random_market(seed, 3, 3).unwrap();
        let market = TreeMarket::from_model(&m).unwrap();
        let tree = m.filtration();
        let n = tree.len();
        // fractions well inside the admissible interval at every node
        let mut pi = random_control(n, seed, 1.0);
        for s in 0..n {
            if !tree.is_terminal(s) {
                let (lo, hi) = market.fraction_bounds(s);
                pi[s] = 0.5 * (lo.max(-50.0) + hi.min(50.0)) + 0.25 * pi[s] * (hi.min(50.0) - lo.max(-50.0));
            }
        }
        let pir = stochastic_integral(tree, &pi, m.base_return()).unwrap();
        let e = stochastic_exponential(tree, &pir, ExpVariant::Multiplicative).unwrap();
        let x = market.wealth(1.0, &pi).unwrap();
        for s in 0..n {
            let p = tree.parent(s);
            let expected = match p {
                None => 1.0,
                Some(p) => x[p] * (1.0 + pi[p] * (m.base_return()[s] - m.base_return()[p])),
            };
            prop_assert_eq!(x[s], expected);
            prop_assert!((e[s] - x[s]).abs() <= 1e-12 * x[s].abs().max(1.0));
        }
    }

    #[test]
    fn modes_agree_for_deterministic_squared_increments(deltas in prop::collection::vec(0.001f64..0.3, 7)) {
        let tree = FiltrationTree::uniform(TimeGrid::uniform(1.0, 3).unwrap(), &[0.5, 0.5]).unwrap();
        let mut m = vec![0.0; tree.len()];
        for s in 0..tree.len() {
            let kids = tree.children(s).to_vec();
            for (k, &c) in kids.iter().enumerate() {
                let d = deltas[s % deltas.len()];
                m[c] = m[s] + if k == 0 { d } else { -d };
            }
        }
        let m = AdaptedProcess(m);
        let p = quadratic_variation(&tree, &m, QvMode::Predictable).unwrap();
        let r = quadratic_variation(&tree, &m, QvMode::Realized).unwrap();
        for s in 0..tree.len() {
            prop_assert!((p.values[s] - r.values[s]).abs() <= 1e-15);
        }
    }
}

/// Mean over paths of |Π(1 + σΔW) − reference|, the reference being the
/// exponential with realized or exact quadratic variation.
fn exponential_error(e: &PathEnsemble, sigma: f64, exact: bool) -> f64 {
    let chain = e.chain();
    let horizon = e.grid().horizon();
    let errs = e.par_map(|_, w| {
        let x = AdaptedProcess(w.iter().map(|v| sigma * v).collect());
        let mult = stochastic_exponential(&chain, &x, ExpVariant::Multiplicative).unwrap();
        let n = x.len() - 1;
        let reference = if exact {
            (x[n] - 0.5 * sigma * sigma * horizon).exp()
        } else {
            stochastic_exponential(&chain, &x, ExpVariant::Exponential).unwrap()[n]
        };
        (mult[n] - reference).abs()
    });
    errs.iter().sum::<f64>() / errs.len() as f64
}

#[test]
fn multiplicative_exponential_converges() {
    let fine = PathEnsemble::new(3, 2000, TimeGrid::uniform(1.0, 1 << 10).unwrap()).unwrap();
    let levels: Vec<PathEnsemble> = [4, 2, 1].iter().map(|&f| fine.coarsen(f).unwrap()).collect();
    let realized: Vec<f64> = levels.iter().map(|e| exponential_error(e, 0.2, false)).collect();
    let exact: Vec<f64> = levels.iter().map(|e| exponential_error(e, 0.2, true)).collect();
    for k in 0..2 {
        // first order against the realized-variance exponential
        let r = realized[k + 1] / realized[k];
        assert!((0.35..=0.65).contains(&r), "realized ratio {r} ({realized:?})");
        // half order against the exact log-normal value: Σ(ΔW)² − T fluctuates like √Δt
        let r = exact[k + 1] / exact[k];
        assert!((0.6..=0.85).contains(&r), "exact ratio {r} ({exact:?})");
    }
}
