//! Config-driven front end: every command reads one TOML file, applies
//! `--set key.path=value` overrides and writes its artifacts plus a
//! `summary.json` into the configured output directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod setup;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use commands::{execute, Record};
pub use config::{Command, RunConfig};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "shapeopt",
    version,
    about = "Shape and topological sensitivities for Helmholtz and eigenvalue problems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// TOML run configuration.
    pub config: PathBuf,
    /// Override a config entry, e.g. `--set problem.k2=2.0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory relative to the working directory; takes
    /// precedence over `output_dir` in the config.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// State solve, functional value and residuals.
    Solve(RunArgs),
    /// Lowest eigenpairs and their multiplicity clusters.
    Eigs(RunArgs),
    /// Adjoint shape derivative along the configured velocity, with a
    /// finite-difference check.
    ShapeGrad(RunArgs),
    /// Topological derivative field and quotients at query points.
    TopoGrad(RunArgs),
    /// Descent loop.
    Optimize(RunArgs),
    /// Derivative formulas against their oracles; exit 2 if any is out of
    /// tolerance.
    Validate(RunArgs),
    /// Runs the `command` named in the config file.
    Run(RunArgs),
}

/// Loads the configuration, runs the command and prints the outcome.
pub fn dispatch(cli: Cli) -> Result<Record, CliError> {
    let (cmd, args) = match cli.command {
        Sub::Solve(a) => (Some(Command::Solve), a),
        Sub::Eigs(a) => (Some(Command::Eigs), a),
        Sub::ShapeGrad(a) => (Some(Command::ShapeGrad), a),
        Sub::TopoGrad(a) => (Some(Command::TopoGrad), a),
        Sub::Optimize(a) => (Some(Command::Optimize), a),
        Sub::Validate(a) => (Some(Command::Validate), a),
        Sub::Run(a) => (None, a),
    };
    let mut overrides = args.overrides.clone();
    if let Some(dir) = &args.output_dir {
        let dir = std::path::absolute(dir).map_err(|source| CliError::Write { path: dir.clone(), source })?;
        overrides.push(format!("output_dir={}", toml::Value::String(dir.display().to_string())));
    }
    let cfg = config::load(&args.config, &overrides)?;
    let cmd = match cmd.or(cfg.command) {
        Some(c) => c,
        None => {
            return Err(CliError::Config {
                key: "command".into(),
                message: "`run` needs a command in the config".into(),
            })
        }
    };
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let rec = execute(cmd, &cfg, &base)?;
    for c in rec.checks() {
        println!("{c}");
    }
    Ok(rec)
}
