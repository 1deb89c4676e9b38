use std::ops::{Deref, DerefMut};

use super::tree::Filtration;
use crate::{Error, Result};

/// One value per state of a filtration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdaptedProcess(pub Vec<f64>);

/// One value per non-terminal state, applied over the state's outgoing
/// step. Entries at terminal states are ignored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictableControl(pub Vec<f64>);

macro_rules! vec_newtype {
    ($t:ty) => {
        impl Deref for $t {
            type Target = Vec<f64>;
            fn deref(&self) -> &Vec<f64> {
                &self.0
            }
        }
        impl DerefMut for $t {
            fn deref_mut(&mut self) -> &mut Vec<f64> {
                &mut self.0
            }
        }
        impl From<Vec<f64>> for $t {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }
    };
}
vec_newtype!(AdaptedProcess);
vec_newtype!(PredictableControl);

impl AdaptedProcess {
    pub fn constant(n: usize, value: f64) -> Self {
        Self(vec![value; n])
    }
}

impl PredictableControl {
    pub fn constant(n: usize, value: f64) -> Self {
        Self(vec![value; n])
    }

    /// Pointwise product of two controls.
    pub fn product(&self, other: &Self) -> Result<Self> {
        same_len(self.len(), other.len(), "control product")?;
        Ok(Self(self.iter().zip(other.iter()).map(|(a, b)| a * b).collect()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.iter().map(|&v| f(v)).collect())
    }

    pub fn max_abs<F: Filtration>(&self, f: &F) -> f64 {
        (0..f.num_states()).filter(|&s| !f.is_terminal(s)).map(|s| self[s].abs()).fold(0.0, f64::max)
    }
}

/// How `⟨X⟩` is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QvMode {
    /// Cumulative conditional variance of the increments.
    Predictable,
    /// Cumulative sum of squared increments.
    Realized,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticVariation {
    pub mode: QvMode,
    pub values: AdaptedProcess,
}

impl QuadraticVariation {
    pub fn new(mode: QvMode, values: AdaptedProcess) -> Self {
        Self { mode, values }
    }

    /// `a·⟨X⟩ + b·⟨Y⟩`; operands must share a mode.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.mode != other.mode {
            return Err(Error::QvModeMismatch { left: self.mode, right: other.mode });
        }
        same_len(self.values.len(), other.values.len(), "quadratic variation")?;
        let values = self.values.iter().zip(other.values.iter()).map(|(x, y)| a * x + b * y).collect();
        Ok(Self { mode: self.mode, values: AdaptedProcess(values) })
    }

    /// `⟨H·X⟩ = H²·⟨X⟩`.
    pub fn integrate_squared<F: Filtration>(&self, f: &F, h: &PredictableControl) -> Result<Self> {
        let h2 = h.map(|v| v * v);
        Ok(Self { mode: self.mode, values: stochastic_integral(f, &h2, &self.values)? })
    }
}

/// Stochastic exponential discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpVariant {
    /// `Π (1 + ΔX)`, absorbed at zero.
    Multiplicative,
    /// `exp(X − X₀ − ½⟨X⟩)`.
    Exponential,
}

/// Trees compute conditional variances; path chains only see realized
/// increments.
pub fn native_mode<F: Filtration>(f: &F) -> QvMode {
    if f.supports(QvMode::Predictable) {
        QvMode::Predictable
    } else {
        QvMode::Realized
    }
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: lengths {a} and {b}")));
    }
    Ok(())
}

fn check_process<F: Filtration>(f: &F, x: &[f64], what: &str) -> Result<()> {
    same_len(f.num_states(), x.len(), what)
}

pub fn quadratic_variation<F: Filtration>(f: &F, x: &AdaptedProcess, mode: QvMode) -> Result<QuadraticVariation> {
    check_process(f, x, "quadratic variation")?;
    if !f.supports(mode) {
        return Err(Error::QvModeUnsupported(mode));
    }
    let n = f.num_states();
    let mut q = vec![0.0; n];
    match mode {
        QvMode::Realized => {
            for s in 1..n {
                let p = f.parent(s).expect("non-initial state has a parent");
                let d = x[s] - x[p];
                q[s] = q[p] + d * d;
            }
        }
        QvMode::Predictable => {
            for s in 0..n {
                let kids = f.children(s);
                if kids.is_empty() {
                    continue;
                }
                let (mut m1, mut m2) = (0.0, 0.0);
                for &c in kids {
                    let p = f.branch_prob(c);
                    let d = x[c] - x[s];
                    m1 += p * d;
                    m2 += p * d * d;
                }
                let var = (m2 - m1 * m1).max(0.0);
                for &c in kids {
                    q[c] = q[s] + var;
                }
            }
        }
    }
    Ok(QuadraticVariation { mode, values: AdaptedProcess(q) })
}

/// `(H·X)_s = Σ_k H_k (X_{k+1} − X_k)` along the path to `s`.
pub fn stochastic_integral<F: Filtration>(f: &F, h: &PredictableControl, x: &AdaptedProcess) -> Result<AdaptedProcess> {
    check_process(f, x, "integrator")?;
    check_process(f, h, "integrand")?;
    let n = f.num_states();
    let mut out = vec![0.0; n];
    for s in 1..n {
        let p = f.parent(s).expect("non-initial state has a parent");
        if !h[p].is_finite() {
            return Err(Error::Inadmissible(format!("integrand is not finite at state {p}")));
        }
        out[s] = out[p] + h[p] * (x[s] - x[p]);
    }
    Ok(AdaptedProcess(out))
}

/// Stochastic exponential using the filtration's native quadratic
/// variation for the exponential variant.
pub fn stochastic_exponential<F: Filtration>(f: &F, x: &AdaptedProcess, variant: ExpVariant) -> Result<AdaptedProcess> {
    match variant {
        ExpVariant::Multiplicative => {
            check_process(f, x, "stochastic exponential")?;
            let n = f.num_states();
            let mut e = vec![0.0; n];
            e[0] = 1.0;
            for s in 1..n {
                let p = f.parent(s).expect("non-initial state has a parent");
                let g = 1.0 + x[s] - x[p];
                e[s] = if e[p] > 0.0 && g > 0.0 { e[p] * g } else { 0.0 };
            }
            Ok(AdaptedProcess(e))
        }
        ExpVariant::Exponential => {
            let qv = quadratic_variation(f, x, native_mode(f))?;
            stochastic_exponential_with_qv(f, x, &qv)
        }
    }
}

/// `exp(X − X₀ − ½⟨X⟩)` for a caller-supplied `⟨X⟩`.
pub fn stochastic_exponential_with_qv<F: Filtration>(
    f: &F,
    x: &AdaptedProcess,
    qv: &QuadraticVariation,
) -> Result<AdaptedProcess> {
    check_process(f, x, "stochastic exponential")?;
    check_process(f, &qv.values, "quadratic variation")?;
    let x0 = x[0];
    Ok(AdaptedProcess(x.iter().zip(qv.values.iter()).map(|(xs, q)| (xs - x0 - 0.5 * q).exp()).collect()))
}

/// `R⁰ = M + λ·⟨M⟩` with `⟨M⟩` in the filtration's native mode.
pub fn base_return<F: Filtration>(f: &F, m: &AdaptedProcess, lambda: &PredictableControl) -> Result<AdaptedProcess> {
    let qv = quadratic_variation(f, m, native_mode(f))?;
    base_return_with_qv(f, m, lambda, &qv)
}

pub fn base_return_with_qv<F: Filtration>(
    f: &F,
    m: &AdaptedProcess,
    lambda: &PredictableControl,
    qv: &QuadraticVariation,
) -> Result<AdaptedProcess> {
    let drift = stochastic_integral(f, lambda, &qv.values)?;
    check_process(f, m, "driver")?;
    Ok(AdaptedProcess(m.iter().zip(drift.iter()).map(|(a, b)| a + b).collect()))
}
