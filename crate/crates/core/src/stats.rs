//! Sample statistics for Monte Carlo estimates.

/// Number of batches used for batch-means standard errors.
pub const BATCHES: usize = 20;

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Mean and batch-means standard error over `batches` contiguous batches
/// whose sizes differ by at most one.
pub fn batch_means(xs: &[f64], batches: usize) -> Estimate {
    let n = xs.len();
    let b = batches.min(n).max(1);
    let mut means = Vec::with_capacity(b);
    let mut start = 0;
    for k in 0..b {
        let len = n / b + usize::from(k < n % b);
        means.push(mean(&xs[start..start + len]));
        start += len;
    }
    let m = mean(xs);
    let se = if b > 1 { (variance(&means) / b as f64).sqrt() } else { f64::NAN };
    Estimate { mean: m, se }
}
