//! `dtc` command-line experiments: gradient checks, training, comparisons,
//! sweeps, ablations, coordinate export and cost accounting.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod error;
pub mod table;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "dtc", version, about = "Deformable transposed convolution experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Clone, Debug)]
pub struct Common {
    /// Experiment file with `key = value` lines.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Training seed (data seed for `gen-data`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

impl Common {
    /// Defaults, then the config file, then `--set`, then `--seed`.
    pub fn load(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_text(&text)
                .map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))?;
        }
        cfg.apply_overrides(&self.set)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compare analytic gradients against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Comma-separated op names or prefixes (default: all).
        #[arg(long, value_delimiter = ',')]
        ops: Vec<String>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Relative tolerance applied to every op.
        #[arg(long)]
        tol: Option<f64>,
        /// Flip the sign of every analytic gradient.
        #[arg(long, hide = true)]
        inject_sign_fault: bool,
    },
    /// Train one model; writes a checkpoint, history.csv and metrics.txt.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Train several upsamplers over several seeds and tabulate mean ± std.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "linear,dtc_over_linear")]
        upsamplers: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
    },
    /// Train one DTC model per receptive field.
    SweepRf {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "inf,10,2,1")]
        r: Vec<String>,
    },
    /// Train the six coordinate-generator switch settings.
    AblateCoordgen {
        #[command(flatten)]
        common: Common,
    },
    /// Render the sampling coordinates of one DTC layer as a PGM scatter.
    ExportCoords {
        #[command(flatten)]
        common: Common,
        /// Output directory of a `train` run.
        #[arg(long, value_name = "DIR")]
        checkpoint: PathBuf,
        /// Dataset index (default: first validation sample).
        #[arg(long)]
        sample: Option<usize>,
        /// Decoder level; 0 is the last upsampling.
        #[arg(long, default_value_t = 0)]
        level: usize,
    },
    /// Parameter and mult-add counts of every upsampler variant.
    Count {
        #[command(flatten)]
        common: Common,
    },
    /// Write the synthetic dataset as tensor files with PGM previews.
    GenData {
        #[command(flatten)]
        common: Common,
    },
}

/// Parse arguments, run the subcommand and return the exit code.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
