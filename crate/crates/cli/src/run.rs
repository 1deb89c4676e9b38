//! Check orchestration.
//!
//! The orchestrator is sequential; parallel work happens inside the library
//! routines, whose path streams are keyed by path index, so the number of
//! worker threads never changes a result.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use utilab_core::duality::{
    check_conjugacy, check_optimality_relations, check_polarity, check_weak_duality, fmt_num, instance_hash,
    solve_duality, Certificate,
};
use utilab_core::lattice::{BrownianModel, ExpVariant, FiltrationTree, MarketModel, PathEnsemble, QvMode, TreeMarket};
use utilab_core::perturbation::{
    correction_process, integrability_probe, integrability_probe_tree, nupbr_deflator_ensemble, nupbr_deflator_tree,
    tilted_measure, wealth_decomposition_check, DeflatorReport, ProbeReport,
};
use utilab_core::sensitivity::{
    continuity_check, indirect_utility_mc, indirect_utility_tree, sensitivity_mc, sensitivity_tree, tree_wealth,
    EpsGrid, Merton, SensitivityReport,
};

use crate::config::{CheckName, Group, Prepared, PreparedModel};
use crate::output::{
    continuity_table, convergence_table, num, sweep_table, write_atomic, write_table, CheckRecord, RunManifest,
    RunRecord, Table,
};
use crate::CliError;

/// Weak duality gap bound.
pub const WEAK_TOL: f64 = 1e-8;
/// Random `(ξ, η)` pairs per evaluation time.
pub const PAIRS: usize = 5;
pub const CONJUGACY_TOL: f64 = 1e-5;
pub const MARGINAL_TOL: f64 = 1e-6;
pub const BUDGET_TOL: f64 = 1e-8;
pub const POLARITY_TOL: f64 = 1e-10;
pub const DEFLATOR_TOL: f64 = 1e-10;
/// Sampled admissible wealths (or claim/deflator pairs) per check.
pub const SAMPLES: usize = 50;
/// Absolute formula-versus-difference bound on trees.
pub const TREE_SENSITIVITY_TOL: f64 = 1e-4;

/// Result of one check before persistence.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub check: CheckName,
    pub passed: bool,
    pub summary: Vec<(String, String)>,
    pub tables: Vec<Table>,
}

impl Outcome {
    fn new(check: CheckName, passed: bool) -> Self {
        Self { check, passed, summary: Vec::new(), tables: Vec::new() }
    }

    fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.summary.push((key.to_string(), value.to_string()));
        self
    }

    fn with_num(self, key: &str, x: f64) -> Self {
        self.with(key, fmt_num(x))
    }

    fn table(mut self, t: Table) -> Self {
        self.tables.push(t);
        self
    }
}

/// The checks a subcommand runs: the selected ones that belong to its
/// group.
pub fn plan(p: &Prepared, group: Group) -> Result<Vec<CheckName>, CliError> {
    let selected = p.config.selected_checks()?;
    let applicable = CheckName::ALL.into_iter().any(|c| group.contains(c) && c.applies_to(&p.config.model));
    if !applicable {
        return Err(CliError::Config {
            key: "model.kind".into(),
            msg: format!("no `{}` check applies to this model kind", group.name()),
        });
    }
    Ok(selected.into_iter().filter(|c| group.contains(*c)).collect())
}

/// Runs the planned checks, writes every table, certificate and the
/// manifest into the output directory, and returns the manifest.
pub fn run(p: &Prepared, group: Group) -> Result<RunManifest, CliError> {
    let start = Instant::now();
    let checks = plan(p, group)?;
    let out = &p.config.out;
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let ctx = Context::new(p)?;
    let mut records = Vec::with_capacity(checks.len());
    for c in checks {
        let t0 = Instant::now();
        let o = ctx.run_check(c)?;
        let mut files = Vec::new();
        for t in &o.tables {
            files.push(file_name(write_table(out, t)?));
        }
        let mut cert = Certificate::new(c.as_str(), &ctx.instance, o.passed);
        for (k, v) in &o.summary {
            cert = cert.with(k, v);
        }
        let cert_path = out.join(format!("{c}.cert"));
        write_atomic(&cert_path, cert.to_string().as_bytes())?;
        files.push(file_name(cert_path));
        records.push(CheckRecord {
            record: "check",
            check: c.to_string(),
            passed: o.passed,
            wall_ms: t0.elapsed().as_millis(),
            summary: o.summary,
            files,
        });
    }
    let run = RunRecord {
        record: "run",
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: group.name().to_string(),
        config_hash: p.config.hash(),
        input_hash: p.input_hash.clone(),
        seed: p.config.seed,
        checks: records.len(),
        passed: records.iter().all(|r| r.passed),
        wall_ms: start.elapsed().as_millis(),
        config: p.config.to_toml(),
    };
    let manifest = RunManifest { checks: records, run };
    manifest.write(out)?;
    Ok(manifest)
}

fn file_name(p: PathBuf) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

struct Context<'a> {
    p: &'a Prepared,
    instance: String,
    /// Evaluation times as `(grid index, time)`.
    times: Vec<(usize, f64)>,
}

impl<'a> Context<'a> {
    fn new(p: &'a Prepared) -> Result<Self, CliError> {
        let instance = match &p.model {
            PreparedModel::Tree(inst) => instance_hash(&TreeMarket::from_model(&inst.model)?, &p.utility),
            PreparedModel::Brownian { .. } => p.config.hash(),
        };
        let times = p.time_index.iter().copied().zip(p.config.times.iter().copied()).collect();
        Ok(Self { p, instance, times })
    }

    fn run_check(&self, c: CheckName) -> Result<Outcome, CliError> {
        match (&self.p.model, c) {
            (PreparedModel::Tree(inst), CheckName::WeakDuality) => self.weak_duality(&inst.model),
            (PreparedModel::Tree(inst), CheckName::Conjugacy) => self.conjugacy(&inst.model),
            (PreparedModel::Tree(inst), CheckName::Optimality) => self.optimality(&inst.model),
            (PreparedModel::Tree(inst), CheckName::Polarity) => self.polarity(&inst.model),
            (PreparedModel::Tree(inst), CheckName::Deflator) => self.deflator_tree(&inst.model),
            (PreparedModel::Tree(inst), CheckName::Probe) => self.probe_tree(&inst.model),
            (PreparedModel::Tree(inst), CheckName::Sensitivity) => self.sensitivity_tree(&inst.model),
            (PreparedModel::Tree(inst), CheckName::Continuity) => self.continuity_tree(&inst.model),
            (PreparedModel::Brownian { .. }, CheckName::Deflator) => self.deflator_ensemble(),
            (PreparedModel::Brownian { .. }, CheckName::Probe) => self.probe_ensemble(),
            (PreparedModel::Brownian { .. }, CheckName::Sensitivity) => self.sensitivity_ensemble(),
            (PreparedModel::Brownian { .. }, CheckName::Continuity) => self.continuity_ensemble(),
            (PreparedModel::Brownian { .. }, CheckName::Convergence) => self.convergence(),
            _ => unreachable!("applicability is checked when planning"),
        }
    }

    fn brownian(&self, paths: usize, steps: Option<usize>) -> Result<BrownianModel, CliError> {
        let PreparedModel::Brownian { sigma, lambda, grid, paths: default_paths } = &self.p.model else {
            unreachable!("ensemble checks run on Brownian models")
        };
        let grid = match steps {
            Some(n) => utilab_core::lattice::TimeGrid::uniform(grid.horizon(), n)?,
            None => grid.clone(),
        };
        let n_paths = if paths == 0 { *default_paths } else { paths };
        Ok(BrownianModel::new(*sigma, *lambda, PathEnsemble::new(self.p.config.seed, n_paths, grid)?)?)
    }

    fn strategy(&self) -> (f64, f64) {
        (self.p.config.strategy.pi, self.p.config.strategy.x0)
    }

    fn base_wealth(&self, model: &MarketModel<FiltrationTree>) -> Result<Vec<f64>, CliError> {
        let spec = self.p.pert.on(model.filtration().len())?;
        let (pi, x0) = self.strategy();
        Ok(tree_wealth(model, &spec, pi, x0, 0.0)?.0)
    }

    /// `ξ` equal to the base wealth at depth `t` and zero elsewhere.
    fn wealth_at(&self, model: &MarketModel<FiltrationTree>, t: usize) -> Result<Vec<f64>, CliError> {
        let x = self.base_wealth(model)?;
        let mut xi = vec![0.0; x.len()];
        for &m in model.filtration().nodes_at(t) {
            xi[m] = x[m];
        }
        Ok(xi)
    }

    fn weak_duality(&self, model: &MarketModel<FiltrationTree>) -> Result<Outcome, CliError> {
        let market = TreeMarket::from_model(model)?;
        let n = market.tree().len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.p.config.seed);
        let mut table = Table::new("weak_duality", &["time", "pair", "node", "gap"]);
        let mut max_gap = f64::NEG_INFINITY;
        for &(t, time) in &self.times {
            for pair in 0..PAIRS {
                let xi: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0f64..2.0).exp()).collect();
                let eta: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0f64..2.0).exp()).collect();
                let r = check_weak_duality(&market, &self.p.utility, &xi, &eta, t, WEAK_TOL)?;
                for (&m, &g) in r.nodes.iter().zip(&r.gaps) {
                    table.push(vec![num(time), pair.to_string(), m.to_string(), num(g)]);
                }
                max_gap = max_gap.max(r.max_gap);
            }
        }
        Ok(Outcome::new(CheckName::WeakDuality, max_gap <= WEAK_TOL)
            .with_num("tolerance", WEAK_TOL)
            .with("pairs", PAIRS * self.times.len())
            .with_num("max_gap", max_gap)
            .table(table))
    }

    fn conjugacy(&self, model: &MarketModel<FiltrationTree>) -> Result<Outcome, CliError> {
        let market = TreeMarket::from_model(model)?;
        let n = market.tree().len();
        let mut table = Table::new("conjugacy", &["time", "node", "sup_gap", "inf_gap", "exhausted"]);
        let mut passed = true;
        let mut max_gap: f64 = 0.0;
        for &(t, time) in &self.times {
            let xi = self.wealth_at(model, t)?;
            let r = check_conjugacy(&market, &self.p.utility, t, &xi, &vec![1.0; n], CONJUGACY_TOL)?;
            for c in &r.nodes {
                table.push(vec![
                    num(time),
                    c.node.to_string(),
                    num(c.sup_gap),
                    num(c.inf_gap),
                    c.exhausted.to_string(),
                ]);
            }
            passed &= r.passed();
            max_gap = max_gap.max(r.max_gap());
        }
        Ok(Outcome::new(CheckName::Conjugacy, passed)
            .with_num("tolerance", CONJUGACY_TOL)
            .with_num("max_gap", max_gap)
            .table(table))
    }

    fn optimality(&self, model: &MarketModel<FiltrationTree>) -> Result<Outcome, CliError> {
        let market = TreeMarket::from_model(model)?;
        let mut table =
            Table::new("optimality", &["time", "marginal_err", "inverse_err", "budget_err", "maximality_err"]);
        let mut passed = true;
        let (mut rel, mut budget) = (0.0f64, 0.0f64);
        for &(t, time) in &self.times {
            let sol = solve_duality(&market, &self.p.utility, &self.wealth_at(model, t)?, t)?;
            let r = check_optimality_relations(&market, &self.p.utility, &sol, MARGINAL_TOL, BUDGET_TOL)?;
            table.push(vec![
                num(time),
                num(r.marginal_err),
                num(r.inverse_err),
                num(r.budget_err),
                num(r.maximality_err),
            ]);
            passed &= r.passed();
            rel = rel.max(r.marginal_err).max(r.inverse_err);
            budget = budget.max(r.budget_err).max(r.maximality_err);
        }
        Ok(Outcome::new(CheckName::Optimality, passed)
            .with_num("relative_tolerance", MARGINAL_TOL)
            .with_num("budget_tolerance", BUDGET_TOL)
            .with_num("max_relative_err", rel)
            .with_num("max_budget_err", budget)
            .table(table))
    }

    fn polarity(&self, model: &MarketModel<FiltrationTree>) -> Result<Outcome, CliError> {
        let market = TreeMarket::from_model(model)?;
        let mut table = Table::new("polarity", &["time", "max_pairing", "scaled_pairing", "passed"]);
        let mut passed = true;
        let mut worst = f64::NEG_INFINITY;
        for &(t, time) in &self.times {
            let r = check_polarity(&market, t, SAMPLES, self.p.config.seed, POLARITY_TOL)?;
            table.push(vec![num(time), num(r.max_pairing), num(r.scaled_pairing), r.passed().to_string()]);
            passed &= r.passed();
            worst = worst.max(r.max_pairing);
        }
        Ok(Outcome::new(CheckName::Polarity, passed)
            .with_num("tolerance", POLARITY_TOL)
            .with_num("max_pairing", worst)
            .table(table))
    }

    fn deflator_outcome(&self, r: &DeflatorReport) -> Outcome {
        let mut table = Table::new("deflator", &["eps", "excess", "min_z"]);
        for pt in &r.points {
            table.push(vec![num(pt.eps), num(pt.excess), num(pt.min_z)]);
        }
        let excess = r.points.iter().map(|p| p.excess).fold(f64::NEG_INFINITY, f64::max);
        let min_z = r.points.iter().map(|p| p.min_z).fold(f64::INFINITY, f64::min);
        Outcome::new(CheckName::Deflator, r.passed())
            .with_num("tolerance", r.tol)
            .with_num("max_excess", excess)
            .with_num("min_z", min_z)
            .table(table)
    }

    fn deflator_tree(&self, model: &MarketModel<FiltrationTree>) -> Result<Outcome, CliError> {
        let spec = self.p.pert.on(model.filtration().len())?;
        let eps = &self.p.config.perturbation.deflator_eps;
        let r = nupbr_deflator_tree(model, &spec, eps, SAMPLES, self.p.config.seed, DEFLATOR_TOL)?;
        Ok(self.deflator_outcome(&r))
    }

    fn deflator_ensemble(&self) -> Result<Outcome, CliError> {
        let bm = self.brownian(0, None)?;
        let pi = self.p.config.strategy.pi;
        let fractions = [0.0, 0.5 * pi, pi, 1.0];
        let r = nupbr_deflator_ensemble(&bm, &self.p.pert, &self.p.config.perturbation.deflator_eps, &fractions)?;
        Ok(self.deflator_outcome(&r))
    }

    fn probe_outcome(&self, r: &ProbeReport) -> Outcome {
        let mut table = Table::new("probe", &["c", "estimate", "rel_se", "split_gap", "stable"]);
        for pt in &r.points {
            table.push(vec![num(pt.c), num(pt.estimate), num(pt.rel_se), num(pt.split_gap), pt.stable.to_string()]);
        }
        let largest = r.largest_stable.map_or_else(|| "none".to_string(), fmt_num);
        Outcome::new(CheckName::Probe, r.largest_stable.is_some()).with("largest_stable_c", largest).table(table)
    }

    fn probe_tree(&self, model: &MarketModel<FiltrationTree>) -> Result<Outcome, CliError> {
        let market = TreeMarket::from_model(model)?;
        let spec = self.p.pert.on(model.filtration().len())?;
        let sol = solve_duality(&market, &self.p.utility, &self.wealth_at(model, 0)?, 0)?;
        let measure = tilted_measure(&market, &sol)?;
        let corr = correction_process(model, &spec, 0.0, ExpVariant::Multiplicative)?;
        let r = integrability_probe_tree(&measure, &corr, &self.p.config.perturbation.probe_c)?;
        Ok(self.probe_outcome(&r))
    }

    fn probe_ensemble(&self) -> Result<Outcome, CliError> {
        let bm = self.brownian(0, None)?;
        let merton = Merton::new(bm.sigma, bm.lambda, self.p.utility.clone())?;
        let n = bm.ensemble.grid().n_steps() + 1;
        let horizon = bm.horizon();
        let spec = self.p.pert.on(n)?;
        let per_path: Vec<Result<(f64, f64, f64), CliError>> = bm.ensemble.par_map(|_, w| {
            let m = bm.path_model(w, QvMode::Predictable)?;
            let corr = correction_process(&m, &spec, 0.0, ExpVariant::Exponential)?;
            Ok((merton.tilt_weight(w[n - 1] - w[0], horizon), corr.r_bar[n - 1], corr.r_bar_qv.values[n - 1]))
        });
        let per_path = per_path.into_iter().collect::<Result<Vec<_>, _>>()?;
        let weights: Vec<f64> = per_path.iter().map(|p| p.0).collect();
        let r_bar: Vec<f64> = per_path.iter().map(|p| p.1).collect();
        let qv: Vec<f64> = per_path.iter().map(|p| p.2).collect();
        let r = integrability_probe(&weights, &r_bar, &qv, &self.p.config.perturbation.probe_c)?;
        Ok(self.probe_outcome(&r))
    }

    fn fd_grid(&self) -> Result<EpsGrid, CliError> {
        let p = &self.p.config.perturbation;
        Ok(EpsGrid::new(p.eps0, p.levels)?)
    }

    fn sensitivity_outcome(&self, reports: &[SensitivityReport]) -> Outcome {
        let node = |r: &SensitivityReport| r.node.map_or_else(|| "mean".to_string(), |m| m.to_string());
        let mut values = Table::new("sensitivity", &["time", "eps", "node", "value", "se"]);
        let mut deriv = Table::new(
            "derivative",
            &["time", "node", "formula", "formula_se", "fd", "fd_error", "gap", "tol", "passed"],
        );
        for r in reports {
            for (e, est) in &r.fd.values {
                values.push(vec![num(r.time), num(*e), node(r), num(est.mean), num(est.se)]);
            }
            deriv.push(vec![
                num(r.time),
                node(r),
                num(r.formula.mean),
                num(r.formula.se),
                num(r.fd.extrapolated.mean),
                num(r.fd.error()),
                num(r.gap()),
                num(r.tol),
                r.passed().to_string(),
            ]);
        }
        let worst = reports.iter().map(|r| r.gap() / r.tol).fold(0.0, f64::max);
        let max_gap = reports.iter().map(|r| r.gap()).fold(0.0, f64::max);
        Outcome::new(CheckName::Sensitivity, reports.iter().all(|r| r.passed()))
            .with("comparisons", reports.len())
            .with_num("max_gap", max_gap)
            .with_num("max_gap_over_tol", worst)
            .table(values)
            .table(deriv)
    }

    fn sensitivity_tree(&self, model: &MarketModel<FiltrationTree>) -> Result<Outcome, CliError> {
        let spec = self.p.pert.on(model.filtration().len())?;
        let grid = self.fd_grid()?;
        let (pi, x0) = self.strategy();
        let mut reports = Vec::new();
        for &(t, _) in &self.times {
            reports.extend(sensitivity_tree(model, &spec, pi, x0, &self.p.utility, t, &grid, TREE_SENSITIVITY_TOL)?);
        }
        Ok(self.sensitivity_outcome(&reports))
    }

    fn sensitivity_ensemble(&self) -> Result<Outcome, CliError> {
        let bm = self.brownian(0, None)?;
        let grid = self.fd_grid()?;
        let (pi, x0) = self.strategy();
        let mut reports = Vec::new();
        for &(t, _) in &self.times {
            reports.push(sensitivity_mc(&bm, &self.p.utility, &self.p.pert, pi, x0, t, &grid)?);
        }
        Ok(self.sensitivity_outcome(&reports))
    }

    fn continuity_eps(&self) -> Vec<f64> {
        let e = self.p.config.perturbation.continuity_eps0;
        vec![-e, -e / 2.0, -e / 4.0, 0.0, e / 4.0, e / 2.0, e]
    }

    /// `sweeps[k]` holds, for time `k`, `(ε, values for the check, mean, se)`.
    #[allow(clippy::type_complexity)]
    fn continuity_outcome(&self, sweeps: Vec<Vec<(f64, Vec<f64>, f64, f64)>>) -> Result<Outcome, CliError> {
        let mut rows = Vec::new();
        let mut tables = Vec::new();
        let mut passed = true;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (&(t, time), sweep) in self.times.iter().zip(&sweeps) {
            let check: Vec<(f64, Vec<f64>)> = sweep.iter().map(|s| (s.0, s.1.clone())).collect();
            let r = continuity_check(&check)?;
            passed &= r.passed();
            for x in r.ratios.iter().flat_map(|r| r.2.iter()) {
                lo = lo.min(*x);
                hi = hi.max(*x);
            }
            let means: Vec<(f64, f64)> = sweep.iter().map(|s| (s.0, s.2)).collect();
            tables.push(continuity_table(t, &means));
            rows.extend(sweep.iter().map(|s| (time, s.0, s.2, s.3)));
        }
        let mut o = Outcome::new(CheckName::Continuity, passed)
            .with_num("min_ratio", lo)
            .with_num("max_ratio", hi)
            .table(sweep_table("continuity", &rows));
        o.tables.extend(tables);
        Ok(o)
    }

    fn continuity_tree(&self, model: &MarketModel<FiltrationTree>) -> Result<Outcome, CliError> {
        let spec = self.p.pert.on(model.filtration().len())?;
        let (pi, x0) = self.strategy();
        let mut sweeps = Vec::new();
        for &(t, _) in &self.times {
            let mut sweep = Vec::new();
            for e in self.continuity_eps() {
                let j = indirect_utility_tree(model, &spec, pi, x0, &self.p.utility, t, e)?;
                sweep.push((e, j.values, j.estimate.mean, j.estimate.se));
            }
            sweeps.push(sweep);
        }
        self.continuity_outcome(sweeps)
    }

    fn continuity_ensemble(&self) -> Result<Outcome, CliError> {
        let bm = self.brownian(0, None)?;
        let (pi, x0) = self.strategy();
        let mut sweeps = Vec::new();
        for &(t, _) in &self.times {
            let mut sweep = Vec::new();
            for e in self.continuity_eps() {
                let j = indirect_utility_mc(&bm, &self.p.utility, &self.p.pert, pi, x0, t, e)?;
                sweep.push((e, vec![j.estimate.mean], j.estimate.mean, j.estimate.se));
            }
            sweeps.push(sweep);
        }
        self.continuity_outcome(sweeps)
    }

    fn convergence(&self) -> Result<Outcome, CliError> {
        let c = &self.p.config.convergence;
        let finest = *c.steps.last().expect("validated nonempty");
        let bm = self.brownian(c.paths, Some(finest))?;
        let factors: Vec<usize> = c.steps.iter().map(|s| finest / s).collect();
        let (pi, x0) = self.strategy();
        let r = wealth_decomposition_check(&bm, &self.p.pert, pi, x0, c.eps, &factors)?;
        let ratios: Vec<String> = r.ratios.iter().map(|x| fmt_num(*x)).collect();
        Ok(Outcome::new(CheckName::Convergence, r.passed())
            .with("halving_ratios", ratios.join(" "))
            .with_num("order", r.order())
            .table(convergence_table(&r)))
    }
}
