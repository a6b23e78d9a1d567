mod common;

use common::{gradient_cases, gradient_suite, GRAD_INSTANCES, GRAD_TOL};

#[test]
fn every_case_passes_finite_differences() {
    let results = gradient_suite(GRAD_INSTANCES, 11);
    let failures: Vec<_> = results.iter().filter(|(_, e)| !(*e < GRAD_TOL)).collect();
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn suite_covers_losses_and_length_controller() {
    let names: Vec<_> = gradient_cases().into_iter().map(|c| c.0).collect();
    for want in ["ctc_loss", "label_smoothed_ce", "joint_loss_wemb_chain", "output_length_controller"] {
        assert!(names.contains(&want), "{want}");
    }
}
