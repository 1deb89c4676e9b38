use crate::{Error, Result};

/// Ordered observation instants `t_0 = 0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidGrid("need at least two instants".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::InvalidGrid(format!("t0 must be 0, got {}", times[0])));
        }
        for (k, w) in times.windows(2).enumerate() {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "times must be strictly increasing (step {k}: {} -> {})",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { times })
    }

    pub fn uniform(horizon: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "uniform grid needs horizon > 0 and at least one step (T = {horizon}, N = {n_steps})"
            )));
        }
        let dt = horizon / n_steps as f64;
        let mut times: Vec<f64> = (0..=n_steps).map(|k| k as f64 * dt).collect();
        times[n_steps] = horizon;
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Length of step `k`, i.e. `t_{k+1} - t_k`.
    pub fn step(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    pub fn is_uniform(&self) -> bool {
        let dt = self.step(0);
        (0..self.n_steps()).all(|k| (self.step(k) - dt).abs() <= 1e-12 * dt.max(1.0))
    }

    /// Index of the grid point equal to `t` (to 1e-12), if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let scale = self.horizon().max(1.0);
        self.times.iter().position(|&s| (s - t).abs() <= 1e-12 * scale)
    }

    /// Keeps every `factor`-th instant.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.n_steps().is_multiple_of(factor) {
            return Err(Error::InvalidGrid(format!("cannot coarsen {} steps by a factor of {factor}", self.n_steps())));
        }
        Self::new(self.times.iter().step_by(factor).copied().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(TimeGrid::new(vec![0.0]).is_err());
        assert!(TimeGrid::new(vec![0.1, 1.0]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeGrid::uniform(0.0, 4).is_err());
        assert!(TimeGrid::uniform(1.0, 0).is_err());
    }

    #[test]
    fn uniform_grid_hits_horizon() {
        let g = TimeGrid::uniform(1.0, 3).unwrap();
        assert_eq!(g.horizon(), 1.0);
        assert_eq!(g.n_steps(), 3);
        assert!(g.is_uniform());
        assert_eq!(g.index_of(1.0 / 3.0), Some(1));
        assert_eq!(g.index_of(0.4), None);
    }

    #[test]
    fn coarsening() {
        let g = TimeGrid::uniform(1.0, 8).unwrap();
        let c = g.coarsen(2).unwrap();
        assert_eq!(c.n_steps(), 4);
        assert_eq!(c.times()[1], g.times()[2]);
        assert!(g.coarsen(3).is_err());
    }
}
