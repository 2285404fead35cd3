use dtc_core::dtc::AblationSwitches;
use dtc_core::segnet::{count_params_flops, Cost, UNetConfig, Upsampler};

use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::{table, Common};

#[derive(Clone, Debug, PartialEq)]
pub struct CountRow {
    pub variant: Upsampler,
    pub cost: Cost,
    /// The same network without the deformable branch.
    pub base: Cost,
}

impl CountRow {
    pub fn params_overhead_pct(&self) -> f64 {
        overhead(self.cost.params, self.base.params)
    }

    pub fn mult_adds_overhead_pct(&self) -> f64 {
        overhead(self.cost.mult_adds, self.base.mult_adds)
    }
}

fn overhead(v: u64, base: u64) -> f64 {
    100.0 * (v as f64 - base as f64) / base as f64
}

/// Costs of every upsampler variant at the configured size. Each variant
/// uses its default up-sampler channel rule.
pub fn count_rows(cfg: &ExperimentConfig) -> CliResult<Vec<CountRow>> {
    let spatial = cfg.dataset().spatial();
    let model = cfg.model()?;
    let cost_of = |up: Upsampler| -> CliResult<Cost> {
        let m = UNetConfig {
            up_channels: None,
            ..model.with_upsampler(up)
        };
        Ok(count_params_flops(&m, &spatial)?)
    };
    let mut rows = Vec::new();
    for name in Upsampler::NAMES {
        let up = Upsampler::parse(name, cfg.r, AblationSwitches::FULL)?;
        rows.push(CountRow {
            variant: up,
            cost: cost_of(up)?,
            base: cost_of(up.base_variant())?,
        });
    }
    Ok(rows)
}

pub fn count_csv(rows: &[CountRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.variant.name().to_string(),
                r.variant.base_variant().name().to_string(),
                r.cost.params.to_string(),
                r.cost.mult_adds.to_string(),
                format!("{:.4}", r.params_overhead_pct()),
                format!("{:.4}", r.mult_adds_overhead_pct()),
            ]
        })
        .collect();
    table::csv(
        &["variant", "base", "params", "mult_adds", "params_overhead_pct", "mult_adds_overhead_pct"],
        &body,
    )
}

pub fn count(common: &Common) -> CliResult<()> {
    let cfg = common.load()?;
    cfg.validate()?;
    let rows = count_rows(&cfg)?;
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let dtc = r.variant.is_dtc();
            let pct = |v: f64| if dtc { format!("{v:+.2}%") } else { "-".into() };
            vec![
                r.variant.name().to_string(),
                r.cost.params.to_string(),
                format!("{:.4}", r.cost.mult_adds as f64 / 1e9),
                if dtc { r.variant.base_variant().name().to_string() } else { "-".into() },
                pct(r.params_overhead_pct()),
                pct(r.mult_adds_overhead_pct()),
            ]
        })
        .collect();
    print!(
        "{}",
        table::render(
            &["variant", "params", "mult-adds (G)", "base", "params +", "mult-adds +"],
            &body
        )
    );
    table::write_file(&common.out, "count.csv", &count_csv(&rows))
}
