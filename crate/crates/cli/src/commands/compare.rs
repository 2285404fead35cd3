use dtc_core::par;

use super::{fmt6, progress, run_training, RunResult};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::{table, Common};

/// Per-upsampler summary row.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub upsampler: String,
    pub runs: Vec<(u64, RunResult)>,
}

impl CompareRow {
    pub fn dice(&self) -> (f64, f64) {
        table::mean_std(&self.runs.iter().map(|(_, r)| r.metrics.dice).collect::<Vec<_>>())
    }

    pub fn nsd(&self) -> (f64, f64) {
        table::mean_std(&self.runs.iter().map(|(_, r)| r.metrics.nsd).collect::<Vec<_>>())
    }
}

/// Train every (upsampler, seed) pair; rows follow the declared order.
pub fn run_compare(base: &ExperimentConfig, upsamplers: &[String], seeds: &[u64]) -> CliResult<Vec<CompareRow>> {
    if upsamplers.is_empty() || seeds.is_empty() {
        return Err(CliError::Usage("compare needs at least one upsampler and one seed".into()));
    }
    let mut jobs = Vec::new();
    for (i, name) in upsamplers.iter().enumerate() {
        if upsamplers[..i].contains(name) {
            return Err(CliError::Usage(format!("upsampler {name:?} listed twice")));
        }
        let mut cfg = base.clone();
        cfg.set("model.upsampler", name)?;
        cfg.validate()?;
        for &seed in seeds {
            jobs.push(ExperimentConfig { seed, ..cfg.clone() });
        }
    }
    let results = par::map_slice(&jobs, |cfg| {
        let tag = format!("{}/seed{}", cfg.upsampler, cfg.seed);
        run_training(cfg, &mut progress(tag), None)
    });
    let mut results = results.into_iter();
    let mut rows = Vec::new();
    for name in upsamplers {
        let mut runs = Vec::new();
        for &seed in seeds {
            runs.push((seed, results.next().expect("one result per job")?));
        }
        rows.push(CompareRow {
            upsampler: name.clone(),
            runs,
        });
    }
    Ok(rows)
}

fn pct(m: (f64, f64)) -> String {
    format!("{:.2} ± {:.2}", 100.0 * m.0, 100.0 * m.1)
}

pub fn summary_csv(rows: &[CompareRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let (d, n) = (r.dice(), r.nsd());
            vec![
                r.upsampler.clone(),
                r.runs.len().to_string(),
                fmt6(d.0),
                fmt6(d.1),
                fmt6(n.0),
                fmt6(n.1),
            ]
        })
        .collect();
    table::csv(&["upsampler", "runs", "dice_mean", "dice_std", "nsd_mean", "nsd_std"], &body)
}

pub fn runs_csv(rows: &[CompareRow]) -> String {
    let mut body = Vec::new();
    for r in rows {
        for (seed, run) in &r.runs {
            body.push(vec![
                r.upsampler.clone(),
                seed.to_string(),
                fmt6(run.metrics.dice),
                fmt6(run.metrics.nsd),
                fmt6(run.final_loss()),
            ]);
        }
    }
    table::csv(&["upsampler", "seed", "dice", "nsd", "final_loss"], &body)
}

pub fn compare(common: &Common, upsamplers: &[String], seeds: &[u64]) -> CliResult<()> {
    let cfg = common.load()?;
    let rows = run_compare(&cfg, upsamplers, seeds)?;
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.upsampler.clone(), pct(r.dice()), pct(r.nsd())])
        .collect();
    print!("{}", table::render(&["upsampler", "Dice (%)", "NSD (%)"], &body));
    table::write_file(&common.out, "compare.csv", &summary_csv(&rows))?;
    table::write_file(&common.out, "compare_runs.csv", &runs_csv(&rows))?;
    Ok(())
}
