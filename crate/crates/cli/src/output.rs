//! Result persistence: CSV tables, certificates and the run manifest.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! table read back reproduces the computed `f64` values exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use utilab_core::perturbation::ConvergenceReport;

use crate::CliError;

/// A table held in memory until written.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.to_string(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
    }
}

/// Shortest round-trip decimal, switching to exponent form for very small or
/// very large magnitudes.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tmp", e.to_string_lossy()),
        None => "tmp".to_string(),
    });
    fs::write(&tmp, contents).map_err(|e| CliError::Io(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_table(dir: &Path, table: &Table) -> Result<PathBuf, CliError> {
    let path = dir.join(format!("{}.csv", table.name));
    write_atomic(&path, table.to_csv()?.as_bytes())?;
    Ok(path)
}

/// `(ε, J^ε_t)` for one evaluation time.
pub fn continuity_table(t_index: usize, sweep: &[(f64, f64)]) -> Table {
    let mut t = Table::new(&format!("continuity_t{t_index}"), &["eps", "value"]);
    for &(e, v) in sweep {
        t.push(vec![num(e), num(v)]);
    }
    t
}

/// `(ε, J^ε_t, SE)` for every evaluation time.
pub fn sweep_table(name: &str, rows: &[(f64, f64, f64, f64)]) -> Table {
    let mut t = Table::new(name, &["time", "eps", "value", "se"]);
    for &(time, e, v, se) in rows {
        t.push(vec![num(time), num(e), num(v), num(se)]);
    }
    t
}

/// `log₂` decomposition errors against `log₂ Δt`. `order` is the local
/// slope from the previous row; the first row leaves it empty.
pub fn convergence_table(report: &ConvergenceReport) -> Table {
    let mut t = Table::new("convergence", &["dt", "error", "se", "log2_dt", "log2_error", "order"]);
    for (k, p) in report.points.iter().enumerate() {
        let order = if k == 0 {
            String::new()
        } else {
            let q = &report.points[k - 1];
            num((q.error / p.error).log2() / (q.dt / p.dt).log2())
        };
        t.push(vec![num(p.dt), num(p.error), num(p.se), num(p.dt.log2()), num(p.error.log2()), order]);
    }
    t
}

/// One line of the manifest per check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub record: &'static str,
    pub check: String,
    pub passed: bool,
    pub wall_ms: u128,
    pub summary: Vec<(String, String)>,
    pub files: Vec<String>,
}

/// Closing line of the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub record: &'static str,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_hash: String,
    pub input_hash: Option<String>,
    pub seed: u64,
    pub checks: usize,
    pub passed: bool,
    pub wall_ms: u128,
    /// The resolved configuration; rerunning it reproduces every table.
    pub config: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub checks: Vec<CheckRecord>,
    pub run: RunRecord,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.run.passed
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&serde_json::to_string(c).expect("record serializes"));
            s.push('\n');
        }
        s.push_str(&serde_json::to_string(&self.run).expect("record serializes"));
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join("manifest.jsonl");
        write_atomic(&path, self.to_jsonl().as_bytes())?;
        Ok(path)
    }
}
