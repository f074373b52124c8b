//! Finite-difference verification of composed model graphs.

use pier_core::gradsuite;

#[test]
fn model_gradients_match_finite_differences() {
    let reports = gradsuite::run_model_suite(20, 0xBEEF).expect("suite runs");
    let mut failed = false;
    for r in &reports {
        println!("{}", gradsuite::format_report(r));
        failed |= !r.passed();
        assert!(r.instances >= 20, "{} ran only {} instances", r.name, r.instances);
    }
    assert!(!failed, "model-level gradient tolerance exceeded");
}
