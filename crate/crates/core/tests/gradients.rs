use dtc_core::gradcheck::suite::{run_suite, SuiteOptions};

#[test]
fn every_registered_reverse_pass_matches_finite_differences() {
    let reports = run_suite(&SuiteOptions::default()).unwrap();
    for r in &reports {
        println!("{r}");
    }
    assert_eq!(reports.len(), 8);
    assert!(reports.iter().all(|r| r.passed && r.trials >= 20), "{reports:#?}");
}
