use dtc_core::gradcheck::suite::{run_suite, SuiteOptions};

use crate::error::{CliError, CliResult};
use crate::{table, Common};

pub fn gradcheck(common: &Common, ops: Vec<String>, trials: usize, tol: Option<f64>, inject: bool) -> CliResult<()> {
    if trials == 0 {
        return Err(CliError::Usage("--trials must be >= 1".into()));
    }
    let opts = SuiteOptions {
        trials,
        tol,
        filter: ops,
        seed: common.seed.unwrap_or(0),
        inject_sign_fault: inject,
    };
    let reports = run_suite(&opts)?;
    let mut rows = Vec::new();
    for r in &reports {
        println!("{r}");
        rows.push(vec![
            r.op_name.clone(),
            if r.passed { "pass" } else { "fail" }.to_string(),
            format!("{:.6e}", r.max_rel_error),
            format!("{:.6e}", r.max_abs_error),
            r.trials.to_string(),
            r.worst_trial.to_string(),
        ]);
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} of {} ops passed", reports.len() - failed, reports.len());
    table::write_file(
        &common.out,
        "gradcheck.csv",
        &table::csv(&["op", "status", "max_rel_error", "max_abs_error", "trials", "worst_trial"], &rows),
    )?;
    if failed > 0 {
        return Err(CliError::Check(format!("{failed} gradient check(s) failed")));
    }
    Ok(())
}
