//! `hofx`: cost tables, mapping verification and search, operator comparison, and the
//! desk-scale wave solve.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hofx_core::mma::GemmShape;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    Failed = 1,
    Usage = 2,
    Exhausted = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "hofx", version, about = "High-order FE kernels on emulated FP64 tensor cores")]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Omit wall-clock timings so reports are byte-identical across runs.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `--set mesh.elements=[3,3,3]`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Shared-memory bytes, FLOPs and intensity per GEMM shape.
    Cost {
        /// Shapes as MxNxK; defaults to the seven operator shapes.
        shapes: Vec<GemmShape>,
    },
    /// Check a mapping file for bank conflicts.
    Verify {
        mapping: PathBuf,
        /// Expected shape; must match the file header.
        #[arg(long)]
        shape: Option<GemmShape>,
        #[arg(long, value_enum, default_value_t = commands::LayoutKind::Cyclic)]
        layout: commands::LayoutKind,
        /// Padding of the C column stride; defaults to the value recorded in the file.
        #[arg(long)]
        c_pad: Option<usize>,
    },
    /// Search a conflict-free mapping and write it as a mapping file.
    Search {
        shape: GemmShape,
        #[arg(long, default_value_t = hofx_core::fem::operator::DEFAULT_SEARCH_BUDGET)]
        budget: u64,
        /// Largest C column padding tried.
        #[arg(long, default_value_t = hofx_core::fem::operator::MAX_C_PAD)]
        max_pad: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply every strategy and backend to one random state and compare.
    Compare(ConfigArgs),
    /// Run the RK4 wave solve.
    Solve {
        #[command(flatten)]
        config: ConfigArgs,
        /// Write the final state as a snapshot.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Summary of the analytic reproductions: cost, mappings, fusion traffic.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = commands::Output { format: cli.format, deterministic: cli.deterministic };
    let result = match cli.command {
        Command::Cost { shapes } => commands::cost(&out, &shapes),
        Command::Verify { mapping, shape, layout, c_pad } => commands::verify(&out, &mapping, shape, layout, c_pad),
        Command::Search { shape, budget, max_pad, out: path } => commands::search(&out, shape, budget, max_pad, path.as_deref()),
        Command::Compare(args) => commands::compare(&out, &args),
        Command::Solve { config, snapshot } => commands::solve(&out, &config, snapshot.as_deref()),
        Command::Report => commands::report(&out),
    };
    match result {
        Ok(status) => ExitCode::from(status as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(Status::Usage as u8)
        }
    }
}
