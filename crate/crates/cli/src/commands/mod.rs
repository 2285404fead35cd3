mod ablate;
mod compare;
mod count;
mod export;
mod gendata;
mod gradcheck;
mod sweep;
mod train;

use std::path::Path;

use dtc_core::segnet::save_checkpoint;
use dtc_core::train::{train_loop_with, HistoryRow, MetricResult};
use dtc_core::{DType, Scalar};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::Command;

pub use ablate::ablate_coordgen;
pub use compare::compare;
pub use count::count;
pub use export::export_coords;
pub use gendata::gen_data;
pub use gradcheck::gradcheck;
pub use sweep::{level_lambdas, parse_r_list, sweep_rf};
pub use train::train;

pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_DIR: &str = "checkpoint";

pub fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Gradcheck {
            common,
            ops,
            trials,
            tol,
            inject_sign_fault,
        } => gradcheck(&common, ops, trials, tol, inject_sign_fault),
        Command::Train { common } => train(&common),
        Command::Compare {
            common,
            upsamplers,
            seeds,
        } => compare(&common, &upsamplers, &seeds),
        Command::SweepRf { common, r } => sweep_rf(&common, &r),
        Command::AblateCoordgen { common } => ablate_coordgen(&common),
        Command::ExportCoords {
            common,
            checkpoint,
            sample,
            level,
        } => export_coords(&common, &checkpoint, sample, level),
        Command::Count { common } => count(&common),
        Command::GenData { common } => gen_data(&common),
    }
}

/// History and final validation metrics of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub history: Vec<HistoryRow>,
    pub metrics: MetricResult,
}

impl RunResult {
    pub fn final_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.loss)
    }
}

fn run_typed<T: Scalar>(
    cfg: &ExperimentConfig,
    on_row: &mut dyn FnMut(&HistoryRow),
    checkpoint: Option<&Path>,
) -> CliResult<RunResult> {
    let out = train_loop_with::<T>(&cfg.model()?, &cfg.dataset(), &cfg.train_options(), on_row)?;
    if let Some(dir) = checkpoint {
        save_checkpoint(dir, &out.params)?;
    }
    Ok(RunResult {
        history: out.history,
        metrics: out.metrics,
    })
}

/// Validate and train at the configured precision, optionally saving the
/// parameters.
pub fn run_training(
    cfg: &ExperimentConfig,
    on_row: &mut dyn FnMut(&HistoryRow),
    checkpoint: Option<&Path>,
) -> CliResult<RunResult> {
    cfg.validate()?;
    match cfg.precision {
        DType::F32 => run_typed::<f32>(cfg, on_row, checkpoint),
        DType::F64 => run_typed::<f64>(cfg, on_row, checkpoint),
    }
}

/// Progress line written to standard error.
pub fn progress(tag: String) -> impl FnMut(&HistoryRow) {
    move |r| {
        eprintln!(
            "[{tag}] iter {:>5}  loss {:.4}  dice {:.4}  nsd {:.4}",
            r.iter, r.loss, r.val_dice, r.val_nsd
        )
    }
}

pub fn require_dtc(cfg: &ExperimentConfig, what: &str) -> CliResult<()> {
    if cfg.upsampler()?.is_dtc() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{what} needs a DTC upsampler (model.upsampler = dtc_over_linear or dtc_over_tc), got {:?}",
            cfg.upsampler
        )))
    }
}

pub fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

pub fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}
