//! C interface to distill-ner checkpoints.
//!
//! Every function returns a [`DnStatus`]. On failure a message is kept in
//! thread-local storage and can be read with [`dn_last_error`]. Handles are
//! opaque; free them with [`dn_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use distill_ner::data::Sentence;
use distill_ner::error::Error;
use distill_ner::tagger::{load_checkpoint, ModelBundle};

/// Result code of every exported call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Format = 5,
    Corruption = 6,
    Index = 7,
    Internal = 8,
    Panic = 9,
}

impl From<&Error> for DnStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => DnStatus::Io,
            Error::Format(_) | Error::Parse { .. } => DnStatus::Format,
            Error::Corruption { .. } => DnStatus::Corruption,
            Error::Index { .. } | Error::Range { .. } => DnStatus::Index,
            Error::EmptySequence | Error::Parameter(_) | Error::Usage(_) => DnStatus::InvalidArgument,
            _ => DnStatus::Internal,
        }
    }
}

/// Loaded checkpoint plus cached tag names.
pub struct DnModel {
    bundle: ModelBundle,
    tag_names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: DnStatus, msg: impl Into<String>) -> DnStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> DnStatus) -> DnStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(DnStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, DnStatus> {
    if p.is_null() {
        return Err(fail(DnStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DnStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn dn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dn_model_load(path: *const c_char, out: *mut *mut DnModel) -> DnStatus {
    guard(|| {
        if out.is_null() {
            return fail(DnStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_checkpoint(Path::new(path)) {
            Ok(bundle) => {
                let tag_names = bundle
                    .tagset
                    .labels()
                    .iter()
                    .map(|l| CString::new(l.as_str()).unwrap_or_default())
                    .collect();
                *out = Box::into_raw(Box::new(DnModel { bundle, tag_names }));
                DnStatus::Ok
            }
            Err(e) => fail((&e).into(), e.to_string()),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`dn_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dn_model_free(model: *mut DnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of tags the model predicts.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dn_model_num_tags(model: *const DnModel, out: *mut usize) -> DnStatus {
    guard(|| {
        let (Some(m), false) = (model.as_ref(), out.is_null()) else {
            return fail(DnStatus::NullPointer, "model or out is null");
        };
        *out = m.tag_names.len();
        DnStatus::Ok
    })
}

/// Label of tag `index`. The string is owned by the handle.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dn_model_tag_name(model: *const DnModel, index: usize, out: *mut *const c_char) -> DnStatus {
    guard(|| {
        let (Some(m), false) = (model.as_ref(), out.is_null()) else {
            return fail(DnStatus::NullPointer, "model or out is null");
        };
        match m.tag_names.get(index) {
            Some(c) => {
                *out = c.as_ptr();
                DnStatus::Ok
            }
            None => fail(
                DnStatus::Index,
                format!("tag index {index} out of range ({})", m.tag_names.len()),
            ),
        }
    })
}

/// Trainable parameter count.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dn_model_param_count(model: *const DnModel, out: *mut usize) -> DnStatus {
    guard(|| {
        let (Some(m), false) = (model.as_ref(), out.is_null()) else {
            return fail(DnStatus::NullPointer, "model or out is null");
        };
        *out = m.bundle.params.count_params();
        DnStatus::Ok
    })
}

/// Tags one sentence. Writes `len` tag ids to `out_tags`; use
/// [`dn_model_tag_name`] to turn them into labels.
///
/// # Safety
/// `tokens` must point to `len` NUL-terminated strings and `out_tags` to
/// room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn dn_model_predict(
    model: *const DnModel,
    tokens: *const *const c_char,
    len: usize,
    out_tags: *mut u32,
) -> DnStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(DnStatus::NullPointer, "model is null");
        };
        if tokens.is_null() || out_tags.is_null() {
            return fail(DnStatus::NullPointer, "tokens or out_tags is null");
        }
        if len == 0 {
            return fail(DnStatus::InvalidArgument, "sentence has no tokens");
        }
        let mut words = Vec::with_capacity(len);
        for i in 0..len {
            match str_arg(*tokens.add(i), "token") {
                Ok(w) => words.push(w.to_string()),
                Err(s) => return s,
            }
        }
        let tagged = Sentence::new(0, words, None).and_then(|s| m.bundle.predict(&[s], 1));
        match tagged {
            Ok(mut p) => {
                let tags = p.pop().unwrap_or_default();
                let out = std::slice::from_raw_parts_mut(out_tags, len);
                for (o, t) in out.iter_mut().zip(tags) {
                    *o = t as u32;
                }
                DnStatus::Ok
            }
            Err(e) => fail((&e).into(), e.to_string()),
        }
    })
}
