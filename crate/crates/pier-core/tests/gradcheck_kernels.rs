//! Finite-difference verification of every differentiable kernel.

use pier_core::gradsuite;

#[test]
fn kernel_gradients_match_finite_differences() {
    let reports = gradsuite::run_kernel_suite(20, 0xC0FFEE).expect("suite runs");
    let mut failed = false;
    for r in &reports {
        println!("{}", gradsuite::format_report(r));
        failed |= !r.passed();
    }
    assert!(!failed, "one or more kernels exceeded gradient tolerance");
    assert!(reports.len() >= 12, "expected every kernel family covered");
}
