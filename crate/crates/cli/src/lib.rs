//! Command-line harness: configuration, orchestration of the checks and
//! persistence of their results.
//!
//! Every run writes into its output directory one CSV file per table, one
//! `<check>.cert` certificate per check and a `manifest.jsonl` closing the
//! run.

pub mod config;
pub mod output;
pub mod run;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{CheckName, Group, Prepared, RunConfig};
pub use output::RunManifest;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("cannot parse configuration: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error(transparent)]
    Core(#[from] utilab_core::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Whether the error stems from the configuration rather than the run.
    pub fn is_config(&self) -> bool {
        matches!(self, Self::Config { .. } | Self::Parse(_))
    }
}

/// Command-line overrides applied on top of a configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// `Some(vec![])` selects no check at all.
    pub checks: Option<Vec<String>>,
}

/// Loads, overrides and validates a configuration file.
pub fn prepare(config: &Path, ov: &Overrides) -> Result<Prepared, CliError> {
    let mut c = RunConfig::load(config)?;
    if let Some(s) = ov.seed {
        c.seed = s;
    }
    if let Some(o) = &ov.out {
        c.out = o.clone();
    }
    if let Some(ch) = &ov.checks {
        c.checks = Some(ch.clone());
    }
    let base = config.parent().unwrap_or(Path::new("."));
    c.prepare(base)
}

/// Loads a configuration and runs one subcommand.
pub fn execute(group: Group, config: &Path, ov: &Overrides) -> Result<RunManifest, CliError> {
    run::run(&prepare(config, ov)?, group)
}
