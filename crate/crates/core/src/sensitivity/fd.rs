use crate::stats::{batch_means, Estimate, BATCHES};
use crate::{Error, Result};

/// Symmetric grid `{±ε₀, ±ε₀/2, …, ±ε₀/2^{levels−1}}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsGrid {
    pub eps0: f64,
    pub levels: usize,
}

impl EpsGrid {
    pub fn new(eps0: f64, levels: usize) -> Result<Self> {
        if !(eps0 > 0.0) || !eps0.is_finite() || levels < 2 {
            return Err(Error::Domain(format!("need ε₀ > 0 and at least two levels (ε₀ = {eps0}, levels = {levels})")));
        }
        Ok(Self { eps0, levels })
    }

    /// Recovers the grid from its points; they must be symmetric about 0
    /// and halve from level to level.
    pub fn from_points(points: &[f64]) -> Result<Self> {
        let mut pos: Vec<f64> = points.iter().copied().filter(|&e| e > 0.0).collect();
        pos.sort_by(|a, b| b.total_cmp(a));
        let mut neg: Vec<f64> = points.iter().copied().filter(|&e| e < 0.0).map(|e| -e).collect();
        neg.sort_by(|a, b| b.total_cmp(a));
        if pos != neg || pos.is_empty() {
            return Err(Error::Domain("finite-difference grid is not symmetric about 0".into()));
        }
        let grid = Self::new(pos[0], pos.len())?;
        if pos.iter().zip(grid.steps()).any(|(a, b)| (a - b).abs() > 1e-12 * b) {
            return Err(Error::Domain("finite-difference grid levels must halve".into()));
        }
        Ok(grid)
    }

    /// `ε₀, ε₀/2, …`.
    pub fn steps(&self) -> Vec<f64> {
        (0..self.levels).map(|k| self.eps0 / f64::powi(2.0, k as i32)).collect()
    }

    /// All points in increasing order.
    pub fn points(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.steps().iter().flat_map(|&h| [h, -h]).collect();
        p.sort_by(f64::total_cmp);
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdEstimate {
    /// `J(ε)` per grid point, in the order of [`EpsGrid::points`].
    pub values: Vec<(f64, Estimate)>,
    /// Central differences per level, largest step first.
    pub central: Vec<f64>,
    /// Richardson-extrapolated derivative with its Monte Carlo standard error.
    pub extrapolated: Estimate,
    /// Difference between the two highest-order extrapolants.
    pub spread: f64,
    /// Per-sample extrapolated derivatives (one entry for exact inputs).
    pub samples: Vec<f64>,
}

impl FdEstimate {
    /// Error bar combining the extrapolation spread and the standard error.
    pub fn error(&self) -> f64 {
        let se = if self.extrapolated.se.is_finite() { self.extrapolated.se } else { 0.0 };
        (self.spread * self.spread + se * se).sqrt()
    }
}

/// Richardson table for central differences at halving steps. Returns the
/// top extrapolant and the next-lower-order one built from the smaller
/// steps.
fn richardson(d: &[f64]) -> (f64, f64) {
    let mut table = d.to_vec();
    let mut second = d[d.len() - 1];
    for j in 1..d.len() {
        if j == d.len() - 1 {
            second = table[1];
        }
        let f = f64::powi(4.0, j as i32);
        for k in 0..d.len() - j {
            table[k] = (f * table[k + 1] - table[k]) / (f - 1.0);
        }
    }
    (table[0], second)
}

/// Central differences and Richardson extrapolation. `eval(ε)` returns
/// paired samples of `J(ε)` (common random numbers: sample `i` uses the
/// same randomness for every `ε`); exact evaluations return one sample.
pub fn finite_difference_derivative(
    grid: &EpsGrid,
    mut eval: impl FnMut(f64) -> Result<Vec<f64>>,
) -> Result<FdEstimate> {
    let steps = grid.steps();
    let mut plus = Vec::with_capacity(steps.len());
    let mut minus = Vec::with_capacity(steps.len());
    for &h in &steps {
        plus.push(eval(h)?);
        minus.push(eval(-h)?);
    }
    let n = plus[0].len();
    if n == 0 || plus.iter().chain(minus.iter()).any(|v| v.len() != n) {
        return Err(Error::ShapeMismatch("finite differences need the same number of samples at every ε".into()));
    }
    let per_sample: Vec<f64> = (0..n)
        .map(|i| {
            let d: Vec<f64> = (0..steps.len()).map(|k| (plus[k][i] - minus[k][i]) / (2.0 * steps[k])).collect();
            richardson(&d).0
        })
        .collect();
    let mean_of = |v: &Vec<f64>| v.iter().sum::<f64>() / n as f64;
    let central: Vec<f64> =
        (0..steps.len()).map(|k| (mean_of(&plus[k]) - mean_of(&minus[k])) / (2.0 * steps[k])).collect();
    let (top, second) = richardson(&central);
    let extrapolated = if n > 1 { batch_means(&per_sample, BATCHES) } else { Estimate { mean: top, se: 0.0 } };
    let est = |v: &Vec<f64>| if n > 1 { batch_means(v, BATCHES) } else { Estimate { mean: v[0], se: 0.0 } };
    let mut values: Vec<(f64, Estimate)> =
        steps.iter().enumerate().flat_map(|(k, &h)| [(h, est(&plus[k])), (-h, est(&minus[k]))]).collect();
    values.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(FdEstimate { values, central, extrapolated, spread: (top - second).abs(), samples: per_sample })
}
