//! Batch front door for the tree-harmonic-analysis library: a verification
//! suite, semiclassical ε-sweeps, kernel dumps, and boundary transforms,
//! all driven by flags plus an optional `key = value` config file.

mod config;
mod kernel_cmd;
mod sweep;
mod transform_cmd;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::{ConfigError, Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Lib(#[from] treecalc::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Input(String),
}

/// Harmonic analysis and operator calculus on the (q+1)-homogeneous tree.
#[derive(Parser)]
#[command(name = "treecalc", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Args, Debug, Default)]
struct CommonOpts {
    /// Optional `key = value` configuration file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Branching parameter: the tree is (q+1)-regular.
    #[arg(long)]
    q: Option<u32>,
    /// Ball radius for kernels and operators.
    #[arg(long)]
    radius: Option<usize>,
    /// Number of spectral quadrature nodes.
    #[arg(long)]
    snodes: Option<usize>,
    /// Composition truncation distance.
    #[arg(long)]
    tail: Option<usize>,
    /// Built-in symbol family: bump_profile_only, radial_eps, shifted_k.
    #[arg(long)]
    family: Option<String>,
    /// Semiclassical parameter of the family.
    #[arg(long)]
    eps: Option<f64>,
    /// Shift count for the shifted_k family.
    #[arg(long)]
    k: Option<usize>,
    /// Support radius of the spatial cutoff.
    #[arg(long = "chi-support")]
    chi_support: Option<f64>,
    /// Comma-separated strictly decreasing sweep values.
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    /// Seed for every randomized estimate.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (also set by TREECALC_OUT_DIR).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl CommonOpts {
    fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let flags = Overrides {
            q: self.q,
            radius: self.radius,
            snodes: self.snodes,
            tail: self.tail,
            family: self.family.clone(),
            eps: self.eps,
            k: self.k,
            chi_support: self.chi_support,
            epsilons: self.epsilons.clone(),
            seed: self.seed,
            out: self.out.clone(),
        };
        RunConfig::resolve(self.config.as_deref(), &flags)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the full invariant suite and print a pass/fail table.
    Verify(CommonOpts),
    /// Sweep the semiclassical parameter and write sweep.csv.
    Sweep(CommonOpts),
    /// Quantize a symbol and write its kernel matrix as kernel.csv.
    Kernel {
        #[command(flatten)]
        common: CommonOpts,
        /// Custom symbol table CSV (`x_word,stub,term_index,re,im`).
        #[arg(long, value_name = "FILE")]
        table: Option<PathBuf>,
        /// Named spectral profile for table symbols: bump, one, eigencurve.
        #[arg(long, default_value = "bump")]
        profile: String,
    },
    /// Transform a function CSV (`vertex_word,re,im`) to its spectral table.
    Transform {
        #[command(flatten)]
        common: CommonOpts,
        /// Input function CSV.
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Cylinder depth of the output table (default: support radius).
        #[arg(long)]
        depth: Option<usize>,
    },
}

fn dispatch(cli: Cli) -> Result<u8, CliError> {
    match cli.cmd {
        Cmd::Verify(common) => {
            let cfg = common.resolve()?;
            Ok(verify::run_verify(&cfg) as u8)
        }
        Cmd::Sweep(common) => {
            let cfg = common.resolve()?;
            sweep::run_sweep(&cfg)?;
            Ok(0)
        }
        Cmd::Kernel {
            common,
            table,
            profile,
        } => {
            let cfg = common.resolve()?;
            kernel_cmd::run_kernel(&cfg, table.as_deref(), &profile)?;
            Ok(0)
        }
        Cmd::Transform {
            common,
            input,
            depth,
        } => {
            let cfg = common.resolve()?;
            transform_cmd::run_transform(&cfg, &input, depth)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
