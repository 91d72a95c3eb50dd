use crossview_core::gradcheck::{run, GradCheckOptions};

#[test]
fn every_group_within_tolerance_on_100_instances() {
    let report = run(&GradCheckOptions::default()).unwrap();
    for row in &report.rows {
        assert!(row.instances >= 100, "{}", row.group);
        assert!(row.passed, "{} max rel err {:e}", row.group, row.max_rel_err);
    }
}

#[test]
fn other_seeds_also_pass() {
    for seed in 1..4 {
        let report = run(&GradCheckOptions {
            instances: 30,
            seed,
            ..GradCheckOptions::default()
        })
        .unwrap();
        assert!(report.passed(), "{}", report.to_csv());
    }
}

#[test]
fn tiny_corruption_fails() {
    let report = run(&GradCheckOptions {
        instances: 20,
        corrupt_cv_ec: Some(1e-3),
        ..GradCheckOptions::default()
    })
    .unwrap();
    assert!(!report.passed());
}
