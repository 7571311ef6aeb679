mod common;

#[test]
fn ctc_loss_matches_path_enumeration() {
    let worst = common::ctc_oracle(100, 11);
    assert!(worst < 1e-9, "worst abs diff {worst:.3e}");
}
