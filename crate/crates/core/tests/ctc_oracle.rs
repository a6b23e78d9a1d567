mod common;

use common::{ctc_oracle, ctc_oracle_suite};
use legonn::losses::{ctc_loss, CtcTarget};
use legonn::tensor::{Tape, Tensor};

#[test]
fn ctc_matches_path_enumeration_on_200_instances() {
    let (worst, infeasible) = ctc_oracle_suite(200, 7);
    assert!(worst < 1e-9, "worst log-space gap {worst:e}");
    assert!(infeasible < 200);
}

#[test]
fn uniform_two_frames_single_label() {
    // paths for "a" over 2 frames with V = {blank, a}: a a, a _, _ a → 3/4
    let lp = Tensor::new(vec![2, 2], vec![0.5f64.ln(); 4]).unwrap();
    let want = -(0.75f64.ln());
    assert!((ctc_oracle(&lp, &[1], 0).unwrap() - want).abs() < 1e-15);
    let mut tape = Tape::inference();
    let x = tape.constant(lp);
    let l = ctc_loss(&mut tape, x, &CtcTarget::new(vec![1], 0).unwrap(), 0).unwrap();
    assert!((tape.value(l).item() - want).abs() < 1e-12);
}

#[test]
fn repeated_label_needs_a_separating_blank() {
    let lp = Tensor::new(vec![2, 2], vec![0.5f64.ln(); 4]).unwrap();
    assert!(ctc_oracle(&lp, &[1, 1], 0).is_none());
    let mut tape = Tape::inference();
    let x = tape.constant(lp);
    assert!(ctc_loss(&mut tape, x, &CtcTarget::new(vec![1, 1], 0).unwrap(), 0).is_err());
}
