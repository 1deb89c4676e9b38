//! Gaussian path ensembles with per-path random streams.
//!
//! Path `i` draws its standard normals from a ChaCha8 stream keyed by the
//! master seed with stream id `i`; step `k` consumes the `k`-th normal of
//! that stream. A path's increments therefore depend only on
//! `(seed, i, k)` and never on how paths are distributed across workers.
//! Coarser grids sum consecutive fine increments, so every resolution sees
//! the same Brownian path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::calculus::{AdaptedProcess, PredictableControl, QuadraticVariation, QvMode};
use super::grid::TimeGrid;
use super::market::MarketModel;
use super::tree::PathChain;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    seed: u64,
    n_paths: usize,
    fine: TimeGrid,
    factor: usize,
    grid: TimeGrid,
}

impl PathEnsemble {
    pub fn new(seed: u64, n_paths: usize, grid: TimeGrid) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::Precondition("ensemble needs at least one path".into()));
        }
        Ok(Self { seed, n_paths, fine: grid.clone(), factor: 1, grid })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Same paths observed on every `factor`-th instant.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsen(factor)?;
        Ok(Self { factor: self.factor * factor, grid, ..self.clone() })
    }

    /// Same seed and grid, fewer or more paths (a prefix of the stream ids).
    pub fn with_paths(&self, n_paths: usize) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::Precondition("ensemble needs at least one path".into()));
        }
        Ok(Self { n_paths, ..self.clone() })
    }

    /// Brownian increments of `path` on the ensemble grid.
    pub fn increments(&self, path: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path as u64);
        let mut out = Vec::with_capacity(self.grid.n_steps());
        let mut acc = 0.0;
        for k in 0..self.fine.n_steps() {
            let z: f64 = StandardNormal.sample(&mut rng);
            acc += z * self.fine.step(k).sqrt();
            if (k + 1) % self.factor == 0 {
                out.push(acc);
                acc = 0.0;
            }
        }
        out
    }

    /// Brownian motion `W` along `path`, starting at 0.
    pub fn brownian(&self, path: usize) -> AdaptedProcess {
        let mut w = Vec::with_capacity(self.grid.n_steps() + 1);
        w.push(0.0);
        let mut acc = 0.0;
        for d in self.increments(path) {
            acc += d;
            w.push(acc);
        }
        AdaptedProcess(w)
    }

    pub fn chain(&self) -> PathChain {
        PathChain::new(self.grid.n_steps())
    }

    /// Evaluates `f(path, W)` for every path in parallel; the result is
    /// ordered by path index regardless of the worker count.
    pub fn par_map<T, G>(&self, f: G) -> Vec<T>
    where
        T: Send,
        G: Fn(usize, &AdaptedProcess) -> T + Sync,
    {
        (0..self.n_paths).into_par_iter().map(|i| f(i, &self.brownian(i))).collect()
    }
}

/// Constant-coefficient model `M = σW`, `R⁰ = M + λ⟨M⟩` on an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianModel {
    pub sigma: f64,
    pub lambda: f64,
    pub ensemble: PathEnsemble,
}

impl BrownianModel {
    pub fn new(sigma: f64, lambda: f64, ensemble: PathEnsemble) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() || !lambda.is_finite() {
            return Err(Error::Precondition(format!("need σ > 0 and finite λ (σ = {sigma}, λ = {lambda})")));
        }
        Ok(Self { sigma, lambda, ensemble })
    }

    pub fn horizon(&self) -> f64 {
        self.ensemble.grid().horizon()
    }

    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        Ok(Self { ensemble: self.ensemble.coarsen(factor)?, ..self.clone() })
    }

    /// Exact `⟨M⟩_t = σ²t` on the grid.
    pub fn exact_qv(&self) -> QuadraticVariation {
        let s2 = self.sigma * self.sigma;
        QuadraticVariation::new(
            QvMode::Predictable,
            AdaptedProcess(self.ensemble.grid().times().iter().map(|t| s2 * t).collect()),
        )
    }

    /// The market seen along one path given its Brownian motion. Realized
    /// mode uses `Σ(ΔM)²`, predictable mode the exact `σ²t`.
    pub fn path_model(&self, w: &AdaptedProcess, mode: QvMode) -> Result<MarketModel<PathChain>> {
        let chain = self.ensemble.chain();
        let m = AdaptedProcess(w.iter().map(|x| self.sigma * x).collect());
        let lambda = PredictableControl::constant(m.len(), self.lambda);
        match mode {
            QvMode::Realized => MarketModel::new(chain, m, lambda),
            QvMode::Predictable => MarketModel::with_qv(chain, m, lambda, self.exact_qv()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{quadratic_variation, Filtration};

    fn ensemble(n_paths: usize, n_steps: usize) -> PathEnsemble {
        PathEnsemble::new(7, n_paths, TimeGrid::uniform(1.0, n_steps).unwrap()).unwrap()
    }

    #[test]
    fn reproducible_and_path_local() {
        let a = ensemble(10, 16);
        let b = ensemble(10, 16);
        assert_eq!(a.increments(3), b.increments(3));
        assert_ne!(a.increments(3), a.increments(4));
        // a larger ensemble shares its prefix
        assert_eq!(a.with_paths(100).unwrap().increments(3), a.increments(3));
    }

    #[test]
    fn par_map_independent_of_workers() {
        let e = ensemble(64, 8);
        let f = |_: usize, w: &AdaptedProcess| w[w.len() - 1];
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| e.par_map(f));
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| e.par_map(f));
        assert_eq!(one, four);
    }

    #[test]
    fn coarsening_sums_fine_increments() {
        let e = ensemble(2, 8);
        let c = e.coarsen(4).unwrap();
        let fine = e.brownian(1);
        let coarse = c.brownian(1);
        assert_eq!(coarse.len(), 3);
        assert!((coarse[2] - fine[8]).abs() < 1e-14);
        assert!((coarse[1] - fine[4]).abs() < 1e-14);
    }

    #[test]
    fn increment_moments() {
        let e = ensemble(4000, 4);
        let dt = 0.25;
        let incs: Vec<f64> = (0..e.n_paths()).flat_map(|i| e.increments(i)).collect();
        let n = incs.len() as f64;
        let mean = incs.iter().sum::<f64>() / n;
        let var = incs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // 3 standard errors of the sample mean and variance
        assert!(mean.abs() < 3.0 * (dt / n).sqrt());
        assert!((var - dt).abs() < 3.0 * dt * (2.0 / n).sqrt());
    }

    #[test]
    fn realized_qv_of_brownian_driver() {
        // σ = 0.2, T = 1, Δt = 1e-3, 10⁴ paths: realized ⟨M⟩_T ≈ 0.04
        let e = PathEnsemble::new(11, 10_000, TimeGrid::uniform(1.0, 1000).unwrap()).unwrap();
        let model = BrownianModel::new(0.2, 0.0, e.clone()).unwrap();
        let vals = e.par_map(|_, w| {
            let pm = model.path_model(w, QvMode::Realized).unwrap();
            pm.qv().values[pm.filtration().num_states() - 1]
        });
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - 0.04).abs() < 3.0 * sd / n.sqrt(), "mean {mean}, se {}", sd / n.sqrt());
        // same number via the generic realized QV
        let w = e.brownian(0);
        let m = AdaptedProcess(w.iter().map(|x| 0.2 * x).collect());
        let q = quadratic_variation(&e.chain(), &m, QvMode::Realized).unwrap();
        assert!((q.values[1000] - vals[0]).abs() < 1e-15);
    }

    #[test]
    fn base_return_drift() {
        // λ = 1.75, σ = 0.2: drift per unit time λσ² = 0.07
        let e = PathEnsemble::new(5, 10_000, TimeGrid::uniform(1.0, 50).unwrap()).unwrap();
        let model = BrownianModel::new(0.2, 1.75, e.clone()).unwrap();
        let vals = e.par_map(|_, w| {
            let pm = model.path_model(w, QvMode::Realized).unwrap();
            *pm.base_return().last().unwrap()
        });
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - 0.07).abs() < 3.0 * sd / n.sqrt(), "mean {mean}");
    }
}
