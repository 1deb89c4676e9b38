use super::calculus::{
    base_return_with_qv, native_mode, quadratic_variation, AdaptedProcess, PredictableControl, QuadraticVariation,
    QvMode,
};
use super::tree::{Filtration, FiltrationTree};
use super::MARTINGALE_TOL;
use crate::{Error, Result};

/// Returns driven by a martingale `M` with market price of risk `λ`:
/// `R⁰ = M + λ·⟨M⟩`.
#[derive(Debug, Clone)]
pub struct MarketModel<F> {
    filtration: F,
    driver: AdaptedProcess,
    lambda: PredictableControl,
    qv: QuadraticVariation,
    base: AdaptedProcess,
}

impl<F: Filtration> MarketModel<F> {
    /// Uses the filtration's native quadratic variation of the driver.
    pub fn new(filtration: F, driver: AdaptedProcess, lambda: PredictableControl) -> Result<Self> {
        let qv = quadratic_variation(&filtration, &driver, native_mode(&filtration))?;
        Self::with_qv(filtration, driver, lambda, qv)
    }

    /// Uses a caller-supplied `⟨M⟩`, e.g. the exact `σ²t` of a Brownian driver.
    pub fn with_qv(
        filtration: F,
        driver: AdaptedProcess,
        lambda: PredictableControl,
        qv: QuadraticVariation,
    ) -> Result<Self> {
        let base = base_return_with_qv(&filtration, &driver, &lambda, &qv)?;
        let model = Self { filtration, driver, lambda, qv, base };
        if model.filtration.supports(QvMode::Predictable) && model.filtration.num_states() > 1 {
            let worst = model.martingale_residual();
            if worst > MARTINGALE_TOL {
                return Err(Error::Precondition(format!("driver is not a martingale: |E[ΔM|node]| reaches {worst:e}")));
            }
        }
        let lambda_qv = model.qv.integrate_squared(&model.filtration, &model.lambda)?;
        if lambda_qv.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("λ²·⟨M⟩ is not finite".into()));
        }
        Ok(model)
    }

    pub fn filtration(&self) -> &F {
        &self.filtration
    }

    pub fn driver(&self) -> &AdaptedProcess {
        &self.driver
    }

    pub fn lambda(&self) -> &PredictableControl {
        &self.lambda
    }

    /// `⟨M⟩`.
    pub fn qv(&self) -> &QuadraticVariation {
        &self.qv
    }

    pub fn mode(&self) -> QvMode {
        self.qv.mode
    }

    /// `R⁰`.
    pub fn base_return(&self) -> &AdaptedProcess {
        &self.base
    }

    /// `⟨R⁰⟩` in the model's mode. In predictable mode the drift is
    /// predictable and `⟨R⁰⟩ = ⟨M⟩`.
    pub fn return_qv(&self) -> Result<QuadraticVariation> {
        match self.qv.mode {
            QvMode::Predictable => Ok(self.qv.clone()),
            QvMode::Realized => quadratic_variation(&self.filtration, &self.base, QvMode::Realized),
        }
    }

    /// Largest `|E[ΔM | node]|` over non-terminal states.
    pub fn martingale_residual(&self) -> f64 {
        let f = &self.filtration;
        (0..f.num_states())
            .filter(|&s| !f.is_terminal(s))
            .map(|s| {
                f.children(s).iter().map(|&c| f.branch_prob(c) * (self.driver[c] - self.driver[s])).sum::<f64>().abs()
            })
            .fold(0.0, f64::max)
    }
}

/// A tree together with the one-period returns `ΔR` on every branch: all
/// the portfolio problems on the tree need.
#[derive(Debug, Clone)]
pub struct TreeMarket {
    tree: FiltrationTree,
    returns: AdaptedProcess,
    dr: Vec<f64>,
}

const DEGENERATE: f64 = 1e-14;

impl TreeMarket {
    /// Rejects nodes where the nonzero returns all have one sign (one-period
    /// arbitrage, NUPBR fails).
    pub fn new(tree: FiltrationTree, returns: AdaptedProcess) -> Result<Self> {
        if returns.len() != tree.len() {
            return Err(Error::ShapeMismatch(format!("{} returns for {} nodes", returns.len(), tree.len())));
        }
        let mut dr = vec![0.0; tree.len()];
        for s in 1..tree.len() {
            let p = tree.parent(s).expect("non-root node has a parent");
            dr[s] = returns[s] - returns[p];
        }
        let market = Self { tree, returns, dr };
        for s in 0..market.tree.len() {
            if market.tree.is_terminal(s) || market.is_degenerate(s) {
                continue;
            }
            let kids = market.tree.children(s);
            let up = kids.iter().any(|&c| market.dr[c] > 0.0);
            let down = kids.iter().any(|&c| market.dr[c] < 0.0);
            if !(up && down) {
                return Err(Error::Arbitrage { node: market.tree.label(s) });
            }
        }
        Ok(market)
    }

    pub fn from_model(model: &MarketModel<FiltrationTree>) -> Result<Self> {
        Self::new(model.filtration().clone(), model.base_return().clone())
    }

    pub fn tree(&self) -> &FiltrationTree {
        &self.tree
    }

    pub fn returns(&self) -> &AdaptedProcess {
        &self.returns
    }

    /// Return over the branch into `node`.
    pub fn dr(&self, node: usize) -> f64 {
        self.dr[node]
    }

    /// A node whose branches all carry (numerically) zero return.
    pub fn is_degenerate(&self, node: usize) -> bool {
        self.tree.children(node).iter().all(|&c| self.dr[c].abs() <= DEGENERATE)
    }

    /// Range of one-step fractions `h` keeping `1 + hΔR ≥ 0` on every
    /// branch. Unbounded only at degenerate nodes.
    pub fn fraction_bounds(&self, node: usize) -> (f64, f64) {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for &c in self.tree.children(node) {
            let r = self.dr[c];
            if r > DEGENERATE {
                lo = lo.max(-1.0 / r);
            } else if r < -DEGENERATE {
                hi = hi.min(-1.0 / r);
            }
        }
        (lo, hi)
    }

    /// Self-financing wealth `X_c = X_n (1 + h_n ΔR_c)` from `x0`; controls
    /// that drive any branch below zero are rejected.
    pub fn wealth(&self, x0: f64, h: &PredictableControl) -> Result<AdaptedProcess> {
        if h.len() != self.tree.len() {
            return Err(Error::ShapeMismatch(format!("{} controls for {} nodes", h.len(), self.tree.len())));
        }
        let mut x = vec![0.0; self.tree.len()];
        x[0] = x0;
        for s in 1..self.tree.len() {
            let p = self.tree.parent(s).expect("non-root node has a parent");
            let g = 1.0 + h[p] * self.dr[s];
            if g < 0.0 || !g.is_finite() {
                return Err(Error::Inadmissible(format!(
                    "fraction {} at node {} sends wealth negative",
                    h[p],
                    self.tree.label(p)
                )));
            }
            x[s] = x[p] * g;
        }
        Ok(AdaptedProcess(x))
    }

    /// Enforces the brute-force limits: at most `max_periods` periods and
    /// `max_branching` branches per node.
    pub fn check_size(&self, max_periods: usize, max_branching: usize) -> Result<()> {
        if self.tree.n_periods() > max_periods || self.tree.max_branching() > max_branching {
            return Err(Error::TreeTooLarge(format!(
                "{} periods with branching {} (limits {max_periods}, {max_branching})",
                self.tree.n_periods(),
                self.tree.max_branching()
            )));
        }
        Ok(())
    }
}
