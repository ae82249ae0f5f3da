use std::ffi::{CStr, CString};
use std::ptr;

use distill_ner::data::{build_vocab, Sentence, SyntheticNer};
use distill_ner::rng::Rng;
use distill_ner::tagger::{save_checkpoint, Classifier, ModelBundle, TaggerConfig, TaggerParams};
use distill_ner_ffi::*;

fn small_model(dir: &std::path::Path) -> (CString, ModelBundle) {
    let data = SyntheticNer::new(20, 3).sentences(10, 4);
    let tagset = SyntheticNer::tagset();
    let vocab = build_vocab(&data, None);
    let mut config = TaggerConfig::new(vocab.num_words(), vocab.num_chars(), tagset.len(), Classifier::Crf);
    config.word_dim = 8;
    config.char_dim = 4;
    config.char_filters = 4;
    config.lstm_hidden = 6;
    let params = TaggerParams::init(&config, &mut Rng::new(5), None).unwrap();
    let bundle = ModelBundle::new(config, params, vocab, tagset).unwrap();
    let path = dir.join("m.ckpt");
    save_checkpoint(&bundle, &path).unwrap();
    (CString::new(path.to_str().unwrap()).unwrap(), bundle)
}

fn last_error() -> String {
    let p = dn_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn load_query_predict_free() {
    let dir = tempfile::tempdir().unwrap();
    let (path, bundle) = small_model(dir.path());
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(dn_model_load(path.as_ptr(), &mut model), DnStatus::Ok);
        assert!(dn_last_error().is_null());

        let mut n = 0usize;
        assert_eq!(dn_model_num_tags(model, &mut n), DnStatus::Ok);
        assert_eq!(n, bundle.tagset.len());
        let mut name = ptr::null();
        assert_eq!(dn_model_tag_name(model, 0, &mut name), DnStatus::Ok);
        assert_eq!(CStr::from_ptr(name).to_str().unwrap(), "O");
        assert_eq!(dn_model_tag_name(model, n, &mut name), DnStatus::Index);

        let mut count = 0usize;
        assert_eq!(dn_model_param_count(model, &mut count), DnStatus::Ok);
        assert_eq!(count, bundle.params.count_params());

        let words = ["Maria", "visited", "Berlin", "."];
        let owned: Vec<CString> = words.iter().map(|w| CString::new(*w).unwrap()).collect();
        let ptrs: Vec<_> = owned.iter().map(|c| c.as_ptr()).collect();
        let mut tags = [u32::MAX; 4];
        assert_eq!(
            dn_model_predict(model, ptrs.as_ptr(), 4, tags.as_mut_ptr()),
            DnStatus::Ok
        );
        let s = Sentence::new(0, words.iter().map(|w| w.to_string()).collect(), None).unwrap();
        let expected = bundle.predict(&[s], 1).unwrap().remove(0);
        assert_eq!(tags.iter().map(|&t| t as usize).collect::<Vec<_>>(), expected);

        assert_eq!(
            dn_model_predict(model, ptrs.as_ptr(), 0, tags.as_mut_ptr()),
            DnStatus::InvalidArgument
        );
        dn_model_free(model);
    }
}

#[test]
fn failures_set_status_and_message() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = ptr::null_mut();
    unsafe {
        assert_eq!(dn_model_load(ptr::null(), &mut model), DnStatus::NullPointer);
        assert!(model.is_null());

        let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(dn_model_load(missing.as_ptr(), &mut model), DnStatus::Io);
        assert!(!last_error().is_empty());

        let junk = dir.path().join("junk.ckpt");
        std::fs::write(&junk, b"not a checkpoint").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(dn_model_load(junk.as_ptr(), &mut model), DnStatus::Format);

        let (path, _) = small_model(dir.path());
        let mut bytes = std::fs::read(path.to_str().unwrap()).unwrap();
        bytes.truncate(bytes.len() - 10);
        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, bytes).unwrap();
        let cut = CString::new(cut.to_str().unwrap()).unwrap();
        assert_eq!(dn_model_load(cut.as_ptr(), &mut model), DnStatus::Corruption);
        assert!(last_error().contains("expected"));

        let mut n = 0usize;
        assert_eq!(dn_model_num_tags(ptr::null(), &mut n), DnStatus::NullPointer);
        dn_model_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/distill_ner.h")).unwrap();
    for f in [
        "dn_last_error",
        "dn_model_load",
        "dn_model_free",
        "dn_model_num_tags",
        "dn_model_tag_name",
        "dn_model_param_count",
        "dn_model_predict",
        "DN_STATUS_CORRUPTION",
        "typedef struct DnModel DnModel",
    ] {
        assert!(header.contains(f), "{f} missing from header");
    }
}
