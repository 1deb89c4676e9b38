//! Run configuration.
//!
//! A run is described by one TOML document. Every key is listed in the
//! README; unknown keys are rejected. Semantic validation reports the dotted
//! path of the first offending key.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use utilab_core::duality::{MAX_BRANCHING, MAX_PERIODS};
use utilab_core::lattice::treefile::{TreeDefinition, TreeInstance};
use utilab_core::lattice::{FiltrationTree, MarketModel, TimeGrid, TreeMarket};
use utilab_core::perturbation::{ConstantPerturbation, Variant};
use utilab_core::sensitivity::{tree_wealth, EpsGrid};
use utilab_core::stats::BATCHES;
use utilab_core::utility::UtilityField;

use crate::CliError;

/// Individual checks, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    WeakDuality,
    Conjugacy,
    Optimality,
    Polarity,
    Deflator,
    Probe,
    Sensitivity,
    Continuity,
    Convergence,
}

impl CheckName {
    pub const ALL: [CheckName; 9] = [
        Self::WeakDuality,
        Self::Conjugacy,
        Self::Optimality,
        Self::Polarity,
        Self::Deflator,
        Self::Probe,
        Self::Sensitivity,
        Self::Continuity,
        Self::Convergence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::WeakDuality => "weak_duality",
            Self::Conjugacy => "conjugacy",
            Self::Optimality => "optimality",
            Self::Polarity => "polarity",
            Self::Deflator => "deflator",
            Self::Probe => "probe",
            Self::Sensitivity => "sensitivity",
            Self::Continuity => "continuity",
            Self::Convergence => "convergence",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }

    /// Whether the check can run on a model of this kind.
    pub fn applies_to(self, model: &ModelConfig) -> bool {
        matches!(
            (self, model),
            (Self::WeakDuality | Self::Conjugacy | Self::Optimality | Self::Polarity, ModelConfig::Tree { .. })
                | (Self::Convergence, ModelConfig::Brownian { .. })
                | (Self::Deflator | Self::Probe | Self::Sensitivity | Self::Continuity, _)
        )
    }
}

impl fmt::Display for CheckName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Check groups, one per subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Duality,
    Perturb,
    Sensitivity,
    Convergence,
    All,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Self::Duality => "duality-check",
            Self::Perturb => "perturb-check",
            Self::Sensitivity => "sensitivity",
            Self::Convergence => "convergence",
            Self::All => "all",
        }
    }

    pub fn contains(self, c: CheckName) -> bool {
        use CheckName::*;
        match self {
            Self::Duality => matches!(c, WeakDuality | Conjugacy | Optimality | Polarity),
            Self::Perturb => matches!(c, Deflator | Probe),
            Self::Sensitivity => matches!(c, Sensitivity | Continuity),
            Self::Convergence => c == Convergence,
            Self::All => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Tree definition file, relative to the configuration file.
    Tree { file: PathBuf },
    /// Constant-coefficient Brownian market on a uniform grid.
    Brownian { sigma: f64, lambda: f64, horizon: f64, dt: f64, paths: usize },
}

/// Utility family. Weighted CRRA takes its leaf weights from the tree file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilityConfig {
    Crra { gamma: f64 },
    Log,
    WeightedCrra { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    /// Constant fraction of wealth in the risky asset.
    pub pi: f64,
    #[serde(default = "one")]
    pub x0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub psi: f64,
    pub theta: f64,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    /// Largest finite-difference step; the grid halves it `levels − 1` times.
    #[serde(default = "default_eps0")]
    pub eps0: f64,
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// Largest `ε` of the continuity sweep `{0, ±e, ±e/2, ±e/4}`.
    #[serde(default = "default_continuity_eps0")]
    pub continuity_eps0: f64,
    #[serde(default = "default_deflator_eps")]
    pub deflator_eps: Vec<f64>,
    #[serde(default = "default_probe_c")]
    pub probe_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Steps per horizon, coarsest first; each divides the finest.
    #[serde(default = "default_steps")]
    pub steps: Vec<usize>,
    #[serde(default = "default_conv_paths")]
    pub paths: usize,
    #[serde(default = "default_conv_eps")]
    pub eps: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self { steps: default_steps(), paths: default_conv_paths(), eps: default_conv_eps() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Evaluation times; each must lie on the model grid.
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    /// Restricts the checks that run; absent means every applicable check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<String>>,
    pub model: ModelConfig,
    pub utility: UtilityConfig,
    pub strategy: StrategyConfig,
    pub perturbation: PerturbationConfig,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
}

fn one() -> f64 {
    1.0
}
fn default_eps0() -> f64 {
    0.01
}
fn default_levels() -> usize {
    3
}
fn default_continuity_eps0() -> f64 {
    0.04
}
fn default_deflator_eps() -> Vec<f64> {
    vec![-0.05, 0.0, 0.05]
}
fn default_probe_c() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 4.0, 8.0]
}
fn default_steps() -> Vec<usize> {
    vec![256, 512, 1024]
}
fn default_conv_paths() -> usize {
    100
}
fn default_conv_eps() -> f64 {
    0.05
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_times() -> Vec<f64> {
    vec![0.0]
}

fn bad(key: &str, msg: impl Into<String>) -> CliError {
    CliError::Config { key: key.to_string(), msg: msg.into() }
}

fn positive(key: &str, x: f64) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("must be positive and finite (got {x})")))
    }
}

fn finite(key: &str, x: f64) -> Result<(), CliError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("must be finite (got {x})")))
    }
}

/// A validated configuration with its model loaded.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub model: PreparedModel,
    pub utility: UtilityField,
    pub pert: ConstantPerturbation,
    /// Grid index of every entry of `times`.
    pub time_index: Vec<usize>,
    /// SHA-256 of the tree file contents, if any.
    pub input_hash: Option<String>,
}

#[derive(Debug, Clone)]
pub enum PreparedModel {
    Tree(TreeInstance),
    Brownian { sigma: f64, lambda: f64, grid: TimeGrid, paths: usize },
}

impl PreparedModel {
    pub fn tree(&self) -> Option<&MarketModel<FiltrationTree>> {
        match self {
            Self::Tree(t) => Some(&t.model),
            Self::Brownian { .. } => None,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        match self {
            Self::Tree(t) => t.model.filtration().grid(),
            Self::Brownian { grid, .. } => grid,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// The selected checks, validated against the model kind.
    pub fn selected_checks(&self) -> Result<Vec<CheckName>, CliError> {
        match &self.checks {
            None => Ok(CheckName::ALL.into_iter().filter(|c| c.applies_to(&self.model)).collect()),
            Some(names) => {
                let mut out = Vec::with_capacity(names.len());
                for n in names {
                    let c = CheckName::parse(n).ok_or_else(|| bad("checks", format!("unknown check `{n}`")))?;
                    if !c.applies_to(&self.model) {
                        return Err(bad("checks", format!("`{n}` does not apply to this model kind")));
                    }
                    if !out.contains(&c) {
                        out.push(c);
                    }
                }
                out.sort();
                Ok(out)
            }
        }
    }

    /// Validates every block; `base` resolves the tree file path.
    pub fn prepare(self, base: &Path) -> Result<Prepared, CliError> {
        self.selected_checks()?;
        let (model, input_hash) = match &self.model {
            ModelConfig::Tree { file } => {
                let path = base.join(file);
                let bytes = std::fs::read(&path)
                    .map_err(|e| bad("model.file", format!("cannot read {}: {e}", path.display())))?;
                let text = String::from_utf8(bytes.clone()).map_err(|_| bad("model.file", "not UTF-8"))?;
                let inst = TreeDefinition::parse(&text)
                    .and_then(|d| d.build())
                    .map_err(|e| bad("model.file", e.to_string()))?;
                TreeMarket::from_model(&inst.model)
                    .and_then(|m| m.check_size(MAX_PERIODS, MAX_BRANCHING))
                    .map_err(|e| bad("model.file", e.to_string()))?;
                (PreparedModel::Tree(inst), Some(hex::encode(Sha256::digest(&bytes))))
            }
            ModelConfig::Brownian { sigma, lambda, horizon, dt, paths } => {
                positive("model.sigma", *sigma)?;
                finite("model.lambda", *lambda)?;
                positive("model.horizon", *horizon)?;
                positive("model.dt", *dt)?;
                let steps = (horizon / dt).round();
                if steps < 1.0 || (steps * dt - horizon).abs() > 1e-9 * horizon {
                    return Err(bad("model.dt", format!("{dt} does not divide the horizon {horizon}")));
                }
                if *paths < 2 * BATCHES {
                    return Err(bad("model.paths", format!("need at least {} paths (got {paths})", 2 * BATCHES)));
                }
                let grid = TimeGrid::uniform(*horizon, steps as usize).map_err(|e| bad("model.dt", e.to_string()))?;
                (PreparedModel::Brownian { sigma: *sigma, lambda: *lambda, grid, paths: *paths }, None)
            }
        };

        let utility = match (&self.utility, &model) {
            (UtilityConfig::Crra { gamma }, _) => UtilityField::crra(*gamma),
            (UtilityConfig::Log, _) => Ok(UtilityField::Log),
            (UtilityConfig::WeightedCrra { gamma }, PreparedModel::Tree(inst)) => match &inst.weights {
                Some(w) => UtilityField::weighted_crra(*gamma, w.clone()),
                None => return Err(bad("utility.family", "weighted_crra needs leaf weights in the tree file")),
            },
            (UtilityConfig::WeightedCrra { .. }, PreparedModel::Brownian { .. }) => {
                return Err(bad("utility.family", "weighted_crra needs a tree model"))
            }
        }
        .map_err(|e| bad("utility.gamma", e.to_string()))?;

        let s = &self.strategy;
        finite("strategy.pi", s.pi)?;
        positive("strategy.x0", s.x0)?;

        let p = &self.perturbation;
        finite("perturbation.psi", p.psi)?;
        finite("perturbation.theta", p.theta)?;
        match (p.variant, p.nu) {
            (Variant::Multiplicative, Some(_)) => {
                return Err(bad("perturbation.nu", "only the additive variant takes ν"));
            }
            (_, Some(nu)) => finite("perturbation.nu", nu)?,
            _ => {}
        }
        let pert = ConstantPerturbation { psi: p.psi, theta: p.theta, variant: p.variant, nu: p.nu };
        let hood = pert.neighborhood();
        positive("perturbation.eps0", p.eps0)?;
        EpsGrid::new(p.eps0, p.levels).map_err(|e| bad("perturbation.levels", e.to_string()))?;
        let within = |key: &str, e: f64| -> Result<(), CliError> {
            finite(key, e)?;
            if e.abs() > hood {
                return Err(bad(key, format!("|ε| = {} exceeds the admissible neighborhood {hood}", e.abs())));
            }
            Ok(())
        };
        within("perturbation.eps0", p.eps0)?;
        positive("perturbation.continuity_eps0", p.continuity_eps0)?;
        within("perturbation.continuity_eps0", p.continuity_eps0)?;
        for &e in &p.deflator_eps {
            within("perturbation.deflator_eps", e)?;
        }
        if p.probe_c.is_empty() {
            return Err(bad("perturbation.probe_c", "empty grid"));
        }
        for &c in &p.probe_c {
            positive("perturbation.probe_c", c)?;
        }

        let grid = model.grid();
        if self.times.is_empty() {
            return Err(bad("times", "need at least one evaluation time"));
        }
        let mut time_index = Vec::with_capacity(self.times.len());
        for &t in &self.times {
            let k = grid.index_of(t).ok_or_else(|| bad("times", format!("{t} is not a grid instant")))?;
            time_index.push(k);
        }

        if let PreparedModel::Tree(inst) = &model {
            // π must keep wealth positive in every market the checks visit
            let spec = pert.on(inst.model.filtration().len()).map_err(|e| bad("perturbation.psi", e.to_string()))?;
            spec.validate(&inst.model).map_err(|e| bad("perturbation.psi", e.to_string()))?;
            let largest = p.eps0.max(p.continuity_eps0);
            for e in [0.0, largest, -largest] {
                let x =
                    tree_wealth(&inst.model, &spec, s.pi, s.x0, e).map_err(|e| bad("strategy.pi", e.to_string()))?;
                if x.iter().any(|v| v.is_nan() || *v <= 0.0) {
                    return Err(bad("strategy.pi", format!("wealth is not positive at ε = {e}")));
                }
            }
        }

        if matches!(self.model, ModelConfig::Brownian { .. }) {
            let c = &self.convergence;
            if c.steps.len() < 2 {
                return Err(bad("convergence.steps", "need at least two resolutions"));
            }
            if c.steps.windows(2).any(|w| w[0] >= w[1]) || c.steps[0] == 0 {
                return Err(bad("convergence.steps", "must be positive and increasing"));
            }
            let finest = *c.steps.last().expect("nonempty");
            if c.steps.iter().any(|s| !finest.is_multiple_of(*s)) {
                return Err(bad("convergence.steps", "every entry must divide the finest"));
            }
            if c.paths < 2 * BATCHES {
                return Err(bad("convergence.paths", format!("need at least {} paths", 2 * BATCHES)));
            }
            within("convergence.eps", c.eps)?;
        }

        Ok(Prepared { config: self, model, utility, pert, time_index, input_hash })
    }
}
