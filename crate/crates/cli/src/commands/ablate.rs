use dtc_core::dtc::AblationSwitches;

use super::{fmt6, progress, require_dtc, run_training, RunResult};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::{table, Common};

pub fn run_ablation(base: &ExperimentConfig) -> CliResult<Vec<(AblationSwitches, RunResult)>> {
    require_dtc(base, "ablate-coordgen")?;
    let mut rows = Vec::new();
    for sw in AblationSwitches::ablation_rows() {
        let cfg = ExperimentConfig {
            use_weight: sw.use_weight(),
            use_sigmoid: sw.use_sigmoid(),
            use_tanh: sw.use_tanh(),
            ..base.clone()
        };
        let label = sw.label();
        let run = run_training(&cfg, &mut progress(label.clone()), None)?;
        if run.history.iter().any(|h| !h.loss.is_finite()) {
            return Err(CliError::Check(format!("{label}: non-finite loss")));
        }
        rows.push((sw, run));
    }
    Ok(rows)
}

fn mark(on: bool) -> String {
    if on { "✓" } else { "-" }.to_string()
}

pub fn ablation_csv(rows: &[(AblationSwitches, RunResult)]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(sw, run)| {
            vec![
                sw.label(),
                sw.use_weight().to_string(),
                sw.use_sigmoid().to_string(),
                "true".to_string(),
                sw.use_tanh().to_string(),
                fmt6(run.final_loss()),
                fmt6(run.metrics.dice),
                fmt6(run.metrics.nsd),
            ]
        })
        .collect();
    table::csv(
        &["row", "weight", "sigmoid", "offset", "tanh", "final_loss", "dice", "nsd"],
        &body,
    )
}

pub fn ablate_coordgen(common: &Common) -> CliResult<()> {
    let cfg = common.load()?;
    let rows = run_ablation(&cfg)?;
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(sw, run)| {
            vec![
                mark(sw.use_weight()),
                mark(sw.use_sigmoid()),
                mark(true),
                mark(sw.use_tanh()),
                format!("{:.4}", run.final_loss()),
                format!("{:.2}", 100.0 * run.metrics.dice),
                format!("{:.2}", 100.0 * run.metrics.nsd),
            ]
        })
        .collect();
    print!(
        "{}",
        table::render(
            &["weight", "sigmoid", "offset", "tanh", "final loss", "Dice (%)", "NSD (%)"],
            &body
        )
    );
    table::write_file(&common.out, "ablate_coordgen.csv", &ablation_csv(&rows))
}
