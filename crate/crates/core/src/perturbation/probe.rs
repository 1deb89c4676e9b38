use super::correction::CorrectionProcess;
use super::tilted::TiltedMeasure;
use crate::stats::mean;
use crate::{Error, Result};

/// Relative disagreement allowed between the two sample halves.
const SPLIT_TOL: f64 = 0.1;
/// Largest relative standard error of a stable estimate.
const REL_SE_TOL: f64 = 0.05;

/// Estimate of `E^ℝ[exp(c̄(|R̄_T| + ⟨R̄⟩_T))]` at one `c̄`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbePoint {
    pub c: f64,
    pub estimate: f64,
    pub rel_se: f64,
    /// `|m₁ − m₂|/m` for the means of the two sample halves.
    pub split_gap: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub points: Vec<ProbePoint>,
    /// Largest `c̄` such that it and every smaller grid value are stable.
    pub largest_stable: Option<f64>,
}

fn finish(mut points: Vec<ProbePoint>) -> ProbeReport {
    points.sort_by(|a, b| a.c.total_cmp(&b.c));
    let largest_stable = points.iter().take_while(|p| p.stable).last().map(|p| p.c);
    ProbeReport { points, largest_stable }
}

fn check_grid(c_grid: &[f64]) -> Result<()> {
    if c_grid.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
        return Err(Error::Domain("probe constants must be positive and finite".into()));
    }
    Ok(())
}

/// Monte Carlo version: `weights[i]` is the tilted density of path `i`
/// (mean one under the sampling measure), `r_bar` and `r_bar_qv` are
/// `R̄_T` and `⟨R̄⟩_T` on that path. An estimate is stable when it is
/// finite, the two halves of the sample agree within 10% and the relative
/// standard error is at most 5%.
pub fn integrability_probe(weights: &[f64], r_bar: &[f64], r_bar_qv: &[f64], c_grid: &[f64]) -> Result<ProbeReport> {
    check_grid(c_grid)?;
    let n = weights.len();
    if r_bar.len() != n || r_bar_qv.len() != n || n < 2 {
        return Err(Error::ShapeMismatch("probe needs at least two samples of matching length".into()));
    }
    let points = c_grid
        .iter()
        .map(|&c| {
            let g: Vec<f64> = (0..n).map(|i| weights[i] * (c * (r_bar[i].abs() + r_bar_qv[i])).exp()).collect();
            let m = mean(&g);
            let sd = (g.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
            let rel_se = sd / (n as f64).sqrt() / m;
            let (a, b) = g.split_at(n / 2);
            let split_gap = (mean(a) - mean(b)).abs() / m;
            let stable = m.is_finite() && rel_se.is_finite() && split_gap <= SPLIT_TOL && rel_se <= REL_SE_TOL;
            ProbePoint { c, estimate: m, rel_se, split_gap, stable }
        })
        .collect();
    Ok(finish(points))
}

/// Exact version on a tree under the tilted measure: a finite sum, so every
/// finite value is stable.
pub fn integrability_probe_tree(
    measure: &TiltedMeasure,
    corr: &CorrectionProcess,
    c_grid: &[f64],
) -> Result<ProbeReport> {
    check_grid(c_grid)?;
    let tree = measure.tree();
    let points = c_grid
        .iter()
        .map(|&c| {
            let g: Vec<f64> =
                (0..tree.len()).map(|s| (c * (corr.r_bar[s].abs() + corr.r_bar_qv.values[s])).exp()).collect();
            let estimate = measure.expectation(0, &g);
            ProbePoint { c, estimate, rel_se: 0.0, split_gap: 0.0, stable: estimate.is_finite() }
        })
        .collect();
    Ok(finish(points))
}
