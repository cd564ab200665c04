//! Command-line runner: each subcommand reads one table of a TOML config,
//! drives the matching library module and writes CSV/TOML outputs whose
//! first lines echo the effective config.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod commands;
pub mod config;
pub mod output;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{RunOptions, RunReport};
use config::{EpsKind, ExperimentConfig, InteractionConfig};
pub use output::Format;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("{} check(s) failed: {}", .0.len(), .0.join("; "))]
    Checks(Vec<String>),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::Checks(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<radbath::Error> for CliError {
    fn from(e: radbath::Error) -> Self {
        match e {
            radbath::Error::Parse(m) => CliError::Config(m),
            other => CliError::Precondition(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "radbath", version, about = "Decoherence and decay experiments on system-plus-bath models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decoherence factor trajectory and recurrence summary.
    Decohere(RunArgs),
    /// Effective decay generator, symmetry splitting and exact comparison.
    Wwa(RunArgs),
    /// Scatter of mass and width splittings over interaction draws.
    Ensemble(RunArgs),
    /// Symmetry classification of a decay system.
    Symmetry(RunArgs),
    /// Runs the acceptance suite and prints a pass/fail table.
    Selftest(SelftestArgs),
    /// Verifies that one scatter file is a fixed multiple of another, sample by sample.
    ScaleCheck(ScaleCheckArgs),
    /// Lists the shipped demo configs or prints one.
    Demo {
        name: Option<String>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML config file.
    #[arg(long, value_name = "PATH", conflicts_with = "demo")]
    pub config: Option<PathBuf>,
    /// Shipped demo config by name.
    #[arg(long, value_name = "NAME")]
    pub demo: Option<String>,
    /// Overrides the config seed.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Overrides the regularization mode.
    #[arg(long, value_enum)]
    pub eps_mode: Option<EpsKind>,
}

#[derive(Debug, Clone, Args)]
pub struct SelftestArgs {
    /// Run only these criteria (1-10).
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ScaleCheckArgs {
    pub base: PathBuf,
    pub scaled: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    pub factor: f64,
    /// Largest accepted relative deviation per sample.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let text = match (&self.config, &self.demo) {
            (Some(path), _) => std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
            (None, Some(name)) => config::demo(name)
                .ok_or_else(|| CliError::Config(format!("unknown demo {name:?}")))?
                .to_string(),
            (None, None) => String::new(),
        };
        ExperimentConfig::from_toml(&text)
    }

    fn options(&self) -> RunOptions {
        RunOptions { out: self.out.clone(), format: self.format }
    }
}

fn override_interaction_seed(i: &mut InteractionConfig, seed: u64) {
    match i {
        InteractionConfig::None => {}
        InteractionConfig::Gaussian { seed: s, .. } | InteractionConfig::GaussianCp { seed: s, .. } => *s = seed,
    }
}

fn missing(table: &str) -> CliError {
    CliError::Config(format!("missing [{table}] table"))
}

/// Runs one subcommand; the caller maps errors to exit codes.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    let report: RunReport = match cli.command {
        Command::Decohere(args) => {
            let mut cfg = args.load()?.decohere.unwrap_or_default();
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            commands::decohere(&cfg, &args.options())?
        }
        Command::Wwa(args) => {
            let mut cfg = args.load()?.wwa.ok_or_else(|| missing("wwa"))?;
            if let Some(seed) = args.seed {
                override_interaction_seed(&mut cfg.interaction, seed);
            }
            if let Some(kind) = args.eps_mode {
                cfg.eps.mode = Some(kind);
                cfg.both_modes = false;
            }
            commands::wwa(&cfg, &args.options())?
        }
        Command::Ensemble(args) => {
            let mut cfg = args.load()?.ensemble.ok_or_else(|| missing("ensemble"))?;
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            if let Some(kind) = args.eps_mode {
                cfg.eps.mode = Some(kind);
            }
            commands::ensemble(&cfg, &args.options())?
        }
        Command::Symmetry(args) => {
            let mut cfg = args.load()?.symmetry.ok_or_else(|| missing("symmetry"))?;
            if let Some(seed) = args.seed {
                override_interaction_seed(&mut cfg.interaction, seed);
            }
            if let Some(kind) = args.eps_mode {
                cfg.eps.mode = Some(kind);
            }
            commands::symmetry(&cfg, &args.options())?
        }
        Command::Selftest(args) => {
            let outcomes = acceptance::run_selected(&args.only);
            writeln!(out, "{}", acceptance::table(&outcomes)).map_err(io)?;
            let failed: Vec<String> =
                outcomes.iter().filter(|o| !o.passed).map(|o| format!("criterion {}", o.id)).collect();
            if !failed.is_empty() {
                return Err(CliError::Checks(failed));
            }
            return Ok(());
        }
        Command::ScaleCheck(args) => {
            let r = commands::scale_check(&args.base, &args.scaled, args.factor)?;
            writeln!(
                out,
                "{} samples, max relative deviation from x{} = {:.3e}{}",
                r.samples,
                args.factor,
                r.max_rel_dev,
                r.worst_id.map(|i| format!(" (sample {i})")).unwrap_or_default()
            )
            .map_err(io)?;
            if r.max_rel_dev > args.tol {
                return Err(CliError::Checks(vec![format!("relative deviation {:.3e} > {}", r.max_rel_dev, args.tol)]));
            }
            return Ok(());
        }
        Command::Demo { name: None } => {
            for (name, _) in config::DEMOS {
                writeln!(out, "{name}").map_err(io)?;
            }
            return Ok(());
        }
        Command::Demo { name: Some(name) } => {
            let text = config::demo(&name).ok_or_else(|| CliError::Config(format!("unknown demo {name:?}")))?;
            write!(out, "{text}").map_err(io)?;
            return Ok(());
        }
    };
    for line in &report.lines {
        writeln!(out, "{line}").map_err(io)?;
    }
    for f in &report.files {
        writeln!(out, "wrote {}", f.display()).map_err(io)?;
    }
    if report.failed_checks.is_empty() {
        Ok(())
    } else {
        Err(CliError::Checks(report.failed_checks))
    }
}
