use dtc_core::dtc::{receptive_field_to_lambda, ReceptiveField};

use super::{fmt4, fmt6, progress, require_dtc, run_training, RunResult};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::{table, Common};

/// Parse a receptive-field list, rejecting duplicates.
pub fn parse_r_list(values: &[String]) -> CliResult<Vec<ReceptiveField>> {
    if values.is_empty() {
        return Err(CliError::Usage("--r needs at least one value".into()));
    }
    let mut out: Vec<ReceptiveField> = Vec::new();
    for v in values {
        let r: ReceptiveField = v.parse()?;
        if out.contains(&r) {
            return Err(CliError::Usage(format!("duplicate receptive field {r}")));
        }
        out.push(r);
    }
    Ok(out)
}

/// λ of each DTC unit, indexed by decoder level. Level `l` upsamples a map
/// of extent `extent / 2^(l+1)`.
pub fn level_lambdas(cfg: &ExperimentConfig, r: ReceptiveField) -> CliResult<Vec<f64>> {
    (0..cfg.depth.saturating_sub(1))
        .map(|l| Ok(receptive_field_to_lambda(r, cfg.extent() >> (l + 1))?))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepColumn {
    pub r: ReceptiveField,
    pub lambdas: Vec<f64>,
    pub run: RunResult,
}

pub fn run_sweep(base: &ExperimentConfig, rs: &[ReceptiveField]) -> CliResult<Vec<SweepColumn>> {
    require_dtc(base, "sweep-rf")?;
    let mut cols = Vec::new();
    for &r in rs {
        let cfg = ExperimentConfig { r, ..base.clone() };
        let tag = format!("r={r}");
        let run = run_training(&cfg, &mut progress(tag), None)?;
        if run.history.iter().any(|h| !h.loss.is_finite()) {
            return Err(CliError::Check(format!("r = {r}: non-finite loss")));
        }
        cols.push(SweepColumn {
            r,
            lambdas: level_lambdas(&cfg, r)?,
            run,
        });
    }
    Ok(cols)
}

pub fn sweep_csv(cols: &[SweepColumn]) -> String {
    let levels = cols.first().map_or(0, |c| c.lambdas.len());
    let mut header = vec!["r".to_string()];
    header.extend((0..levels).map(|l| format!("lambda_dec{l}")));
    header.extend(["final_loss", "dice", "nsd"].map(String::from));
    let body: Vec<Vec<String>> = cols
        .iter()
        .map(|c| {
            let mut row = vec![c.r.to_string()];
            row.extend(c.lambdas.iter().map(|&l| fmt6(l)));
            row.extend([fmt6(c.run.final_loss()), fmt6(c.run.metrics.dice), fmt6(c.run.metrics.nsd)]);
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    table::csv(&header, &body)
}

pub fn sweep_rf(common: &Common, r: &[String]) -> CliResult<()> {
    let cfg = common.load()?;
    let rs = parse_r_list(r)?;
    let cols = run_sweep(&cfg, &rs)?;
    let mut header = vec!["r".to_string()];
    header.extend(cols.iter().map(|c| c.r.to_string()));
    let mut body = Vec::new();
    let levels = cols.first().map_or(0, |c| c.lambdas.len());
    for l in (0..levels).rev() {
        let mut row = vec![format!("lambda dec{l}")];
        row.extend(cols.iter().map(|c| fmt4(c.lambdas[l])));
        body.push(row);
    }
    for (name, f) in [
        ("final loss", (|c: &SweepColumn| c.run.final_loss()) as fn(&SweepColumn) -> f64),
        ("Dice (%)", |c| 100.0 * c.run.metrics.dice),
        ("NSD (%)", |c| 100.0 * c.run.metrics.nsd),
    ] {
        let mut row = vec![name.to_string()];
        row.extend(cols.iter().map(|c| format!("{:.2}", f(c))));
        body.push(row);
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    print!("{}", table::render(&header, &body));
    table::write_file(&common.out, "sweep_rf.csv", &sweep_csv(&cols))
}
