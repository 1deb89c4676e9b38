use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use utilab::{execute, Group, Overrides};

/// Duality, perturbation and sensitivity checks for indirect utility.
#[derive(Debug, Parser)]
#[command(name = "utilab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Weak duality, conjugacy, optimality relations and polarity on a tree.
    DualityCheck(RunArgs),
    /// Deflator certificate and integrability probe under the perturbation.
    PerturbCheck(RunArgs),
    /// Derivative formula against finite differences, and continuity.
    Sensitivity(RunArgs),
    /// Convergence of the first-order wealth decomposition.
    Convergence(RunArgs),
    /// Every check that applies to the configured model.
    All(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Runs only the named checks; `--check` alone selects none.
    #[arg(long = "check", num_args = 0.., value_delimiter = ',')]
    check: Option<Vec<String>>,
    /// Worker threads for the parallel sections.
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (group, args) = match cli.command {
        Command::DualityCheck(a) => (Group::Duality, a),
        Command::PerturbCheck(a) => (Group::Perturb, a),
        Command::Sensitivity(a) => (Group::Sensitivity, a),
        Command::Convergence(a) => (Group::Convergence, a),
        Command::All(a) => (Group::All, a),
    };
    if let Some(n) = args.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    let ov = Overrides { seed: args.seed, out: args.out, checks: args.check };
    match execute(group, &args.config, &ov) {
        Ok(m) => {
            for c in &m.checks {
                let detail: Vec<String> = c.summary.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.check, detail.join(" "));
            }
            let failed = m.checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {failed} failed, {} ms", m.checks.len(), m.run.wall_ms);
            if m.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
