mod common;

#[test]
fn saturating_beams_find_exhaustive_argmax() {
    let (ctc, encdec) = common::decode_oracle(30, 21);
    assert_eq!(ctc, 0, "ctc mismatches");
    assert_eq!(encdec, 0, "encoder-decoder mismatches");
}
