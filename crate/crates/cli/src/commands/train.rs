use dtc_core::train::history_csv;

use super::{progress, run_training, CHECKPOINT_DIR, CONFIG_FILE};
use crate::error::CliResult;
use crate::{table, Common};

/// `metrics.txt` contents.
pub fn metrics_text(dice: f64, nsd: f64) -> String {
    format!("dice {dice:.6}\nnsd {nsd:.6}\n")
}

pub fn train(common: &Common) -> CliResult<()> {
    let cfg = common.load()?;
    cfg.validate()?;
    let out = &common.out;
    table::write_file(out, CONFIG_FILE, &cfg.render())?;
    let res = run_training(&cfg, &mut progress("train".into()), Some(&out.join(CHECKPOINT_DIR)))?;
    table::write_file(out, "history.csv", &history_csv(&res.history))?;
    table::write_file(out, "metrics.txt", &metrics_text(res.metrics.dice, res.metrics.nsd))?;
    println!(
        "{} {}: dice {:.4}  nsd {:.4}  ({})",
        cfg.upsampler,
        cfg.seed,
        res.metrics.dice,
        res.metrics.nsd,
        out.display()
    );
    Ok(())
}
