mod common;

use distill_ner::tagger::Classifier;

#[test]
fn every_primitive_matches_finite_differences() {
    for (name, err) in common::primitive_checks() {
        assert!(err < 1e-6, "{name}: relative error {err:e}");
    }
}

#[test]
fn softmax_model_with_combined_loss() {
    let err = common::model_check(Classifier::Softmax);
    assert!(err < 1e-4, "{err:e}");
}

#[test]
fn crf_model_with_combined_loss() {
    let err = common::model_check(Classifier::Crf);
    assert!(err < 1e-4, "{err:e}");
}
