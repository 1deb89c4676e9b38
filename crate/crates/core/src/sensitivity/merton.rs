//! Closed forms for constant coefficients: `M = σW`, constant `λ`, CRRA or
//! logarithmic utility.
//!
//! In the ε-market the volatility is `(1+εψ)σ` and the drift
//! `(1+εψ)λ(1+εθ)σ²`, so the Sharpe ratio is `κ_ε = λ(1+εθ)σ` and `ψ` drops
//! out of the optimal value. With `τ = T − t` the value function is
//! `U(x)·exp((1−γ)κ²τ/(2γ))` for power utility and `log x + κ²τ/2` for the
//! logarithm.

use crate::utility::UtilityField;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Merton {
    pub sigma: f64,
    pub lambda: f64,
    pub utility: UtilityField,
}

impl Merton {
    pub fn new(sigma: f64, lambda: f64, utility: UtilityField) -> Result<Self> {
        if let UtilityField::WeightedCrra { .. } = utility {
            return Err(Error::Precondition("closed forms need an unweighted CRRA or log utility".into()));
        }
        utility.validate()?;
        if !(sigma > 0.0) || !lambda.is_finite() {
            return Err(Error::Precondition(format!("need σ > 0 and finite λ (σ = {sigma}, λ = {lambda})")));
        }
        Ok(Self { sigma, lambda, utility })
    }

    /// `κ_ε = λ(1+εθ)σ`.
    pub fn sharpe(&self, eps: f64, theta: f64) -> f64 {
        self.lambda * (1.0 + eps * theta) * self.sigma
    }

    /// Merton fraction `λ/γ` of the base market.
    pub fn optimal_fraction(&self) -> f64 {
        self.lambda / self.utility.gamma()
    }

    /// `u(x, t, T)` for Sharpe ratio `kappa` and remaining horizon `tau`.
    pub fn value(&self, x: f64, tau: f64, kappa: f64) -> Result<f64> {
        let u = self.utility.u_eval(x, 0)?;
        Ok(if self.utility.is_log() {
            u + 0.5 * kappa * kappa * tau
        } else {
            let g = self.utility.gamma();
            u * ((1.0 - g) * kappa * kappa * tau / (2.0 * g)).exp()
        })
    }

    /// `∂_x u(x, t, T)`.
    pub fn marginal(&self, x: f64, tau: f64, kappa: f64) -> Result<f64> {
        let u = self.utility.u_prime(x, 0)?;
        Ok(if self.utility.is_log() {
            u
        } else {
            let g = self.utility.gamma();
            u * ((1.0 - g) * kappa * kappa * tau / (2.0 * g)).exp()
        })
    }

    /// Terminal density `ρ̂ẑ_T` of the tilted measure relative to time `t`,
    /// given the Brownian increment `ΔW = W_T − W_t`.
    pub fn tilt_weight(&self, dw: f64, tau: f64) -> f64 {
        let a = (self.optimal_fraction() - self.lambda) * self.sigma;
        (a * dw - 0.5 * a * a * tau).exp()
    }

    /// `E^ℝ[R⁰_T − R⁰_t] = λσ²τ/γ`: under the tilted measure `W` gains the
    /// drift `(π* − λ)σ`.
    pub fn tilted_return_mean(&self, tau: f64) -> f64 {
        self.optimal_fraction() * self.sigma * self.sigma * tau
    }
}
