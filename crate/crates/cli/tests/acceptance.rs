//! Acceptance suite: one PASS/FAIL line per criterion, each at its stated
//! tolerance and runtime bound. Exits nonzero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use utilab_core::duality::{
    check_conjugacy, check_optimality_relations, check_weak_duality, solve_duality, MAX_BRANCHING,
};
use utilab_core::lattice::{
    samples, BrownianModel, ExpVariant, FiltrationTree, MarketModel, PathEnsemble, QvMode, TimeGrid, TreeMarket,
};
use utilab_core::perturbation::{
    correction_process, nupbr_deflator_tree, perturbed_return, wealth_decomposition_check, ConstantPerturbation,
    Variant, HALVING_BAND,
};
use utilab_core::sensitivity::{
    continuity_check, derivative_formula_mc, derivative_formula_tree, indirect_utility_mc, indirect_utility_tree,
    sensitivity_mc, sensitivity_tree, tree_wealth, EpsGrid,
};
use utilab_core::utility::UtilityField;
use utilab_core::Result;

const SIGMA: f64 = 0.2;
const LAMBDA: f64 = 1.75;
const PI: f64 = 0.3;
const PSI: f64 = 0.1;
const THETA: f64 = 0.5;

type Outcome = Result<(bool, String)>;

fn families() -> Vec<UtilityField> {
    vec![UtilityField::crra(0.5).unwrap(), UtilityField::crra(2.0).unwrap(), UtilityField::Log]
}

fn crra2() -> UtilityField {
    UtilityField::crra(2.0).unwrap()
}

fn pert() -> ConstantPerturbation {
    ConstantPerturbation::new(PSI, THETA)
}

/// Complete binomial (3 periods) and incomplete trinomial (2 periods) on [0, 1].
fn duality_instances() -> Vec<(&'static str, MarketModel<FiltrationTree>)> {
    vec![
        ("binomial-3", samples::binomial(3, 1.0, SIGMA, LAMBDA).unwrap()),
        ("trinomial-2", samples::trinomial(2, 1.0, SIGMA, LAMBDA).unwrap()),
    ]
}

/// The tree instance of the sensitivity criteria: 2-period trinomial on [0, 0.1].
fn sensitivity_tree_instance() -> MarketModel<FiltrationTree> {
    samples::trinomial(2, 0.1, SIGMA, LAMBDA).unwrap()
}

/// The Black-Scholes instance of the sensitivity criteria: T = 1, Δt = 1/64.
fn bs(n_paths: usize, n_steps: usize) -> BrownianModel {
    let ens = PathEnsemble::new(42, n_paths, TimeGrid::uniform(1.0, n_steps).unwrap()).unwrap();
    BrownianModel::new(SIGMA, LAMBDA, ens).unwrap()
}

fn weak_duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = f64::NEG_INFINITY;
    let mut pairs = 0;
    for seed in 0..50u64 {
        let periods = 1 + (seed as usize % 3);
        let market = TreeMarket::from_model(&samples::random_market(seed, periods, MAX_BRANCHING)?)?;
        let n = market.tree().len();
        for u in families() {
            for _ in 0..5 {
                let xi: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0f64..2.0).exp()).collect();
                let eta: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0f64..2.0).exp()).collect();
                let t = rng.random_range(0..=market.tree().n_periods());
                worst = worst.max(check_weak_duality(&market, &u, &xi, &eta, t, 1e-8)?.max_gap);
                pairs += 1;
            }
        }
    }
    Ok((worst <= 1e-8, format!("{pairs} pairs on 50 trees, max u - v - ξη = {worst:.3e} (tol 1e-8)")))
}

fn conjugacy() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for (_, model) in duality_instances() {
        let market = TreeMarket::from_model(&model)?;
        let n = market.tree().len();
        for u in families() {
            for t in [0, 1] {
                let r = check_conjugacy(&market, &u, t, &vec![1.3; n], &vec![0.7; n], 1e-5)?;
                ok &= r.passed();
                worst = worst.max(r.max_gap());
            }
        }
    }
    Ok((ok, format!("max conjugacy/biconjugacy gap {worst:.3e} (tol 1e-5)")))
}

fn optimality() -> Outcome {
    let (mut rel, mut budget) = (0.0f64, 0.0f64);
    let mut ok = true;
    for (_, model) in duality_instances() {
        let market = TreeMarket::from_model(&model)?;
        let n = market.tree().len();
        for u in families() {
            for t in [0, 1] {
                let mut xi = vec![0.0; n];
                for (k, &m) in market.tree().nodes_at(t).iter().enumerate() {
                    xi[m] = 0.5 + k as f64;
                }
                let sol = solve_duality(&market, &u, &xi, t)?;
                let r = check_optimality_relations(&market, &u, &sol, 1e-6, 1e-8)?;
                ok &= r.passed();
                rel = rel.max(r.marginal_err).max(r.inverse_err);
                budget = budget.max(r.budget_err);
            }
        }
    }
    Ok((ok, format!("max relative marginal error {rel:.3e} (tol 1e-6), max |E_t[ρ̂ẑ_T] - 1| {budget:.3e} (tol 1e-8)")))
}

fn deflator() -> Outcome {
    let mut models: Vec<MarketModel<FiltrationTree>> = duality_instances().into_iter().map(|m| m.1).collect();
    models.push(sensitivity_tree_instance());
    for seed in 0..10 {
        models.push(samples::random_market(seed, 3, MAX_BRANCHING)?);
    }
    let (mut excess, mut min_z) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut ok = true;
    for (k, model) in models.iter().enumerate() {
        let spec = pert().on(model.filtration().len())?;
        let r = nupbr_deflator_tree(model, &spec, &[0.0, 0.05, -0.05], 50, k as u64, 1e-10)?;
        ok &= r.passed();
        for p in &r.points {
            excess = excess.max(p.excess);
            min_z = min_z.min(p.min_z);
        }
    }
    Ok((
        ok,
        format!("{} trees, ε ∈ {{0, ±0.05}}, 50 wealths: max E[Z'X'|n] - ZX = {excess:.3e} (tol 1e-10), min Z = {min_z:.3e}", models.len()),
    ))
}

fn decomposition() -> Outcome {
    let model = bs(100, 1024);
    let r = wealth_decomposition_check(&model, &pert(), PI, 1.0, 0.05, &[4, 2, 1])?;
    let errs: Vec<String> = r.points.iter().map(|p| format!("{:.3e}", p.error)).collect();
    let ratios: Vec<String> = r.ratios.iter().map(|x| format!("{x:.3}")).collect();
    Ok((
        r.passed(),
        format!(
            "errors [{}] at Δt = 2^-8..2^-10, halving ratios [{}] in [{}, {}]",
            errs.join(", "),
            ratios.join(", "),
            HALVING_BAND.0,
            HALVING_BAND.1
        ),
    ))
}

fn sensitivity() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let model = bs(100_000, 64);
    let grid = EpsGrid::new(1e-2, 3)?;
    for t in [0, 32] {
        let r = sensitivity_mc(&model, &crra2(), &pert(), PI, 1.0, t, &grid)?;
        ok &= r.passed();
        parts.push(format!(
            "t={}: formula {:.5} vs FD {:.5}, gap {:.2e} ≤ {:.2e}",
            r.time,
            r.formula.mean,
            r.fd.extrapolated.mean,
            r.gap(),
            r.tol
        ));
    }
    let tree = sensitivity_tree_instance();
    let spec = pert().on(tree.filtration().len())?;
    let grid = EpsGrid::new(1e-3, 3)?;
    let mut worst: f64 = 0.0;
    for t in [0, 1] {
        for r in sensitivity_tree(&tree, &spec, PI, 1.0, &crra2(), t, &grid, 1e-4)? {
            ok &= r.passed();
            worst = worst.max(r.gap());
        }
    }
    parts.push(format!("trinomial max gap {worst:.2e} ≤ 1e-4"));
    Ok((ok, parts.join("; ")))
}

const SWEEP: [f64; 7] = [-0.04, -0.02, -0.01, 0.0, 0.01, 0.02, 0.04];

fn continuity() -> Outcome {
    let mut ok = true;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut record = |sweep: &[(f64, Vec<f64>)]| -> Result<()> {
        let r = continuity_check(sweep)?;
        ok &= r.passed();
        for x in r.ratios.iter().flat_map(|r| r.2.iter()) {
            lo = lo.min(*x);
            hi = hi.max(*x);
        }
        Ok(())
    };
    let model = bs(100_000, 64);
    for t in [0, 32] {
        let sweep: Vec<(f64, Vec<f64>)> = SWEEP
            .iter()
            .map(|&e| Ok((e, vec![indirect_utility_mc(&model, &crra2(), &pert(), PI, 1.0, t, e)?.estimate.mean])))
            .collect::<Result<_>>()?;
        record(&sweep)?;
    }
    let tree = sensitivity_tree_instance();
    let spec = pert().on(tree.filtration().len())?;
    for t in [0, 1] {
        let sweep: Vec<(f64, Vec<f64>)> = SWEEP
            .iter()
            .map(|&e| Ok((e, indirect_utility_tree(&tree, &spec, PI, 1.0, &crra2(), t, e)?.values)))
            .collect::<Result<_>>()?;
        record(&sweep)?;
    }
    Ok((ok, format!("slope ratios under ε-halving in [{lo:.3}, {hi:.3}] (band [0.75, 1.25])")))
}

fn trivial_identities() -> Outcome {
    let mut ok = true;
    let mut failures = Vec::new();
    let trees =
        [sensitivity_tree_instance(), samples::random_market(3, 3, 3)?, samples::binomial(3, 1.0, SIGMA, LAMBDA)?];
    let variants = [pert(), ConstantPerturbation { variant: Variant::Additive, ..pert() }];
    for tree in &trees {
        let n = tree.filtration().len();
        for p in &variants {
            let spec = p.on(n)?;
            if perturbed_return(tree, &spec, 0.0)? != *tree.base_return() {
                ok = false;
                failures.push("R^0 != R0 on a tree");
            }
            for v in [ExpVariant::Multiplicative, ExpVariant::Exponential] {
                if correction_process(tree, &spec, 0.0, v)?.l.iter().any(|&x| x != 1.0) {
                    ok = false;
                    failures.push("L^0 != 1 on a tree");
                }
            }
        }
    }
    let model = bs(200, 64);
    for i in 0..model.ensemble.n_paths() {
        for mode in [QvMode::Realized, QvMode::Predictable] {
            let m = model.path_model(&model.ensemble.brownian(i), mode)?;
            for p in &variants {
                let spec = p.on(65)?;
                if perturbed_return(&m, &spec, 0.0)? != *m.base_return() {
                    ok = false;
                    failures.push("R^0 != R0 on a path");
                }
                if correction_process(&m, &spec, 0.0, ExpVariant::Exponential)?.l.iter().any(|&x| x != 1.0) {
                    ok = false;
                    failures.push("L^0 != 1 on a path");
                }
            }
        }
    }
    let flat = ConstantPerturbation::new(PSI, 0.0);
    if derivative_formula_mc(&model, &crra2(), &flat, PI, 1.0, 0)?.values.iter().any(|&v| v != 0.0) {
        ok = false;
        failures.push("formula != 0 for θ = 0 on paths");
    }
    let tree = &trees[0];
    let n = tree.filtration().len();
    for u in families() {
        if derivative_formula_tree(tree, &flat.on(n)?, PI, 1.0, &u, 0)?.values.iter().any(|&v| v != 0.0) {
            ok = false;
            failures.push("formula != 0 for θ = 0 on a tree");
        }
        let spec = pert().on(n)?;
        for e in [-0.05, 0.0, 0.05] {
            let j = indirect_utility_tree(tree, &spec, PI, 1.0, &u, 2, e)?;
            let x = tree_wealth(tree, &spec, PI, 1.0, e)?;
            for (&m, v) in j.nodes.iter().zip(&j.values) {
                if *v != u.u_eval(x[m], m)? {
                    ok = false;
                    failures.push("J_T != U(X_T) on a tree");
                }
            }
        }
    }
    for e in [-0.05, 0.0, 0.05] {
        let j = indirect_utility_mc(&model, &crra2(), &pert(), PI, 1.0, 64, e)?;
        let spec = pert().on(65)?;
        for (i, v) in j.values.iter().enumerate() {
            let m = model.path_model(&model.ensemble.brownian(i), QvMode::Predictable)?;
            let x = utilab_core::sensitivity::ensemble_wealth(&m, &spec, PI, 1.0, e)?;
            if *v != crra2().u_eval(x[64], 0)? {
                ok = false;
                failures.push("J_T != U(X_T) on a path");
            }
        }
    }
    failures.dedup();
    let msg = if ok {
        "R^0 = R0, L^0 = 1, zero formula for θ = 0 at t = 0, J_T = U(X_T): all bit-exact".to_string()
    } else {
        failures.join(", ")
    };
    Ok((ok, msg))
}

/// Supremum of `U(x) − xy` over a log-spaced grid, refined by golden
/// section on the bracketing cell.
fn grid_sup(f: &UtilityField, y: f64) -> f64 {
    let obj = |x: f64| f.u_eval(x, 0).unwrap() - x * y;
    let n = 4001;
    let (lo, hi) = (-30.0f64, 30.0f64);
    let pts: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
    let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
    for (k, &l) in pts.iter().enumerate() {
        let v = obj(l.exp());
        if v > best {
            best = v;
            arg = k;
        }
    }
    let (mut a, mut b) = (pts[arg.saturating_sub(1)], pts[(arg + 1).min(n - 1)]);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if obj(c.exp()) > obj(d.exp()) {
            b = d;
        } else {
            a = c;
        }
    }
    best.max(obj((0.5 * (a + b)).exp()))
}

fn conjugate_grid() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut fams = families();
    fams.push(UtilityField::weighted_crra(3.0, vec![1.7])?);
    let mut worst: f64 = 0.0;
    for f in &fams {
        let v = f.conjugate();
        for _ in 0..1000 {
            let y = rng.random_range(-4.0f64..4.0).exp();
            worst = worst.max((v.v_eval(y, 0)? - grid_sup(f, y)).abs());
        }
    }
    Ok((
        worst <= 1e-9,
        format!("{} families × 1000 y: max |V(y) - sup_x (U(x) - xy)| = {worst:.3e} (tol 1e-9)", fams.len()),
    ))
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn reproducibility() -> Outcome {
    let configs = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs");
    let tmp = std::env::temp_dir().join(format!("utilab-acceptance-{}", std::process::id()));
    let mut compared = 0;
    let mut ok = true;
    for cfg in ["bs_crra.toml", "trinomial.toml", "duality.toml"] {
        let mut runs = Vec::new();
        for jobs in ["1", "4"] {
            let out = tmp.join(format!("{cfg}-j{jobs}"));
            let status = Command::new(env!("CARGO_BIN_EXE_utilab"))
                .args(["all", "--config", configs.join(cfg).to_str().unwrap(), "--seed", "42", "--jobs", jobs])
                .args(["--out", out.to_str().unwrap()])
                .output()
                .expect("utilab runs");
            ok &= status.status.success();
            runs.push(csv_files(&out));
        }
        ok &= !runs[0].is_empty() && runs[0] == runs[1];
        compared += runs[0].len();
    }
    let _ = fs::remove_dir_all(&tmp);
    Ok((ok, format!("`utilab all --seed 42` with --jobs 1 and 4: {compared} CSV files byte-identical on 3 configs")))
}

struct Criterion {
    id: usize,
    name: &'static str,
    run: fn() -> Outcome,
    /// Runtime bound in seconds, if the criterion states one.
    limit: Option<f64>,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "weak duality", run: weak_duality, limit: Some(10.0) },
        Criterion { id: 2, name: "conjugacy and biconjugacy", run: conjugacy, limit: Some(30.0) },
        Criterion { id: 3, name: "optimality relations", run: optimality, limit: None },
        Criterion { id: 4, name: "deflator certificate", run: deflator, limit: None },
        Criterion { id: 5, name: "wealth decomposition", run: decomposition, limit: Some(30.0) },
        Criterion { id: 6, name: "sensitivity formula", run: sensitivity, limit: Some(60.0) },
        Criterion { id: 7, name: "continuity", run: continuity, limit: None },
        Criterion { id: 8, name: "trivial identities", run: trivial_identities, limit: None },
        Criterion { id: 9, name: "conjugate field", run: conjugate_grid, limit: None },
        Criterion { id: 10, name: "reproducibility", run: reproducibility, limit: None },
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.contains(&c.id)) {
        let start = Instant::now();
        let res = (c.run)();
        let secs = start.elapsed().as_secs_f64();
        let in_time = c.limit.is_none_or(|l| secs < l);
        let (passed, detail) = match res {
            Ok((p, d)) => (p && in_time, d),
            Err(e) => (false, format!("error: {e}")),
        };
        let timing = match c.limit {
            Some(l) => format!("{secs:.1} s < {l:.0} s"),
            None => format!("{secs:.1} s"),
        };
        println!("{} [{}] {}: {detail} ({timing})", if passed { "PASS" } else { "FAIL" }, c.id, c.name);
        if !passed {
            failed += 1;
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
