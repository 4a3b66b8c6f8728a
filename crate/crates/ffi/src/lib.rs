//! C ABI over the styleshift library.
//!
//! Every fallible call returns an [`SsStatus`]; on failure a message is
//! kept per thread and can be read with [`ss_last_error`]. Handles are
//! opaque, created by `*_open`/`*_load` and released by the matching
//! `*_free`. Strings returned through `char **` must be released with
//! [`ss_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use styleshift::checkpoint::Checkpoint;
use styleshift::classifier::StyleModel;
use styleshift::metrics::{bleu, rouge, RougeVariant};
use styleshift::pipeline::{generate_text, Run};
use styleshift::{Error, NoiseSchedule, SampleOptions};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    InvalidArgument = 5,
    Internal = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SsRougeVariant {
    One = 1,
    Two = 2,
    L = 3,
}

/// A trained run: vocabulary, schedule and one checkpoint.
pub struct SsModel {
    run: Run,
    checkpoint: Checkpoint,
    schedule: NoiseSchedule,
}

/// A source/target style classifier.
pub struct SsClassifier {
    model: StyleModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> SsStatus {
    match err {
        Error::Io { .. } => SsStatus::Io,
        Error::Checkpoint(_) | Error::Vocab(_) | Error::Dataset { .. } | Error::Json(_) => SsStatus::Format,
        Error::InvalidArgument(_) | Error::Shape { .. } => SsStatus::InvalidArgument,
        Error::NonFinite { .. } | Error::TrainingDiverged { .. } => SsStatus::Internal,
    }
}

struct Fail(SsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(SsStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SsStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn null(name: &str) -> Fail {
    Fail(SsStatus::NullPointer, format!("{name} is null"))
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Message for the last failed call on this thread ("" after a success).
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ss_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opens a training output directory. `checkpoint` may be null to use the
/// run's best checkpoint.
#[no_mangle]
pub unsafe extern "C" fn ss_model_open(
    run_dir: *const c_char,
    checkpoint: *const c_char,
    out: *mut *mut SsModel,
) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let dir = str_arg(run_dir, "run_dir")?;
        let ck = if checkpoint.is_null() {
            None
        } else {
            Some(str_arg(checkpoint, "checkpoint")?)
        };
        let run = Run::open(Path::new(dir))?;
        let checkpoint = run.load_checkpoint(ck.map(Path::new))?;
        let schedule = run.config.train.schedule()?;
        *out = Box::into_raw(Box::new(SsModel {
            run,
            checkpoint,
            schedule,
        }));
        Ok(())
    })
}

/// Generates target-style text for `src`; `*out` receives a new string.
#[no_mangle]
pub unsafe extern "C" fn ss_model_generate(
    model: *const SsModel,
    src: *const c_char,
    style: *const c_char,
    seed: u64,
    clamp: bool,
    out: *mut *mut c_char,
) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let src = str_arg(src, "src")?;
        let style = str_arg(style, "style")?;
        let opts = SampleOptions {
            clamp,
            seed,
            ..m.run.config.sample.clone()
        };
        let text = generate_text(&m.checkpoint.params, &m.run.vocab, &m.schedule, src, style, &opts)?;
        let c = CString::new(text).map_err(|_| Fail(SsStatus::Internal, "output contains NUL".into()))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// Vocabulary size of the model, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ss_model_vocab_size(model: *const SsModel) -> usize {
    model.as_ref().map_or(0, |m| m.run.vocab.len())
}

#[no_mangle]
pub unsafe extern "C" fn ss_model_free(model: *mut SsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ss_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ss_classifier_load(path: *const c_char, out: *mut *mut SsClassifier) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let model = StyleModel::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(SsClassifier { model }));
        Ok(())
    })
}

/// Probability that `text` is in the target style.
#[no_mangle]
pub unsafe extern "C" fn ss_classifier_score(
    classifier: *const SsClassifier,
    text: *const c_char,
    p_target: *mut f64,
) -> SsStatus {
    guard(|| {
        let c = classifier.as_ref().ok_or_else(|| null("classifier"))?;
        if p_target.is_null() {
            return Err(null("p_target"));
        }
        *p_target = c.model.classify(str_arg(text, "text")?).1;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ss_classifier_free(classifier: *mut SsClassifier) {
    if !classifier.is_null() {
        drop(Box::from_raw(classifier));
    }
}

/// Corpus BLEU (0–100, up to 4-grams) over `n` whitespace-tokenized pairs.
#[no_mangle]
pub unsafe extern "C" fn ss_bleu(
    candidates: *const *const c_char,
    references: *const *const c_char,
    n: usize,
    out: *mut f64,
) -> SsStatus {
    guard(|| {
        if candidates.is_null() || references.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let mut cands = Vec::with_capacity(n);
        let mut refs = Vec::with_capacity(n);
        for i in 0..n {
            cands.push(words(str_arg(*candidates.add(i), "candidate")?));
            refs.push(words(str_arg(*references.add(i), "reference")?));
        }
        *out = bleu(&cands, &refs, 4)?;
        Ok(())
    })
}

/// ROUGE F1 of one whitespace-tokenized candidate against one reference.
#[no_mangle]
pub unsafe extern "C" fn ss_rouge(
    candidate: *const c_char,
    reference: *const c_char,
    variant: SsRougeVariant,
    f1: *mut f64,
) -> SsStatus {
    guard(|| {
        if f1.is_null() {
            return Err(null("f1"));
        }
        let c = words(str_arg(candidate, "candidate")?);
        let r = words(str_arg(reference, "reference")?);
        let v = match variant {
            SsRougeVariant::One => RougeVariant::One,
            SsRougeVariant::Two => RougeVariant::Two,
            SsRougeVariant::L => RougeVariant::L,
        };
        *f1 = rouge(&c, &r, v).f1;
        Ok(())
    })
}
