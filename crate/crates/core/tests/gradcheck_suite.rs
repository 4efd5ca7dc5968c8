use rtmdnet::gradcheck::{run_suite, CHECK_NAMES, TOLERANCE};

#[test]
fn every_gradient_matches_finite_differences() {
    let report = run_suite(20, 2024).unwrap();
    assert_eq!(report.len(), CHECK_NAMES.len());
    for r in &report {
        assert_eq!(r.errors.len(), 20);
        assert!(
            r.passed(TOLERANCE),
            "{} worst relative error {:e}",
            r.name,
            r.worst()
        );
    }
}

#[test]
fn suite_is_seed_deterministic() {
    assert_eq!(run_suite(2, 5).unwrap(), run_suite(2, 5).unwrap());
}
