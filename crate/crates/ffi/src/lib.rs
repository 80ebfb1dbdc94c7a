//! C ABI over `spanslot`.
//!
//! Every function returns a [`SpanslotStatus`]. On failure a description is
//! available from [`spanslot_last_error_message`] on the same thread.
//! Extractor handles are opaque; free them with [`spanslot_extractor_free`].
//!
//! CRF potentials are passed as `steps x 20` row-major doubles: per step the
//! 4x4 transition block laid out `[to][from]`, then the 4 unaries. Tags are
//! `0 = BEF, 1 = BEG, 2 = IN, 3 = AFT`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use spanslot::crf;
use spanslot::tagging::valid_transitions;
use spanslot::{Error, PrecomputedEmbeddings, SlotExtractor, StepPotentials};

/// Number of doubles per CRF step.
pub const SPANSLOT_STEP_WIDTH: usize = 20;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanslotStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidArgument = 5,
    Model = 6,
    Panic = 7,
}

/// Opaque extractor handle.
pub struct SpanslotExtractor {
    inner: SlotExtractor,
    slot: CString,
}

/// One prediction. `start`/`end` are character offsets, end exclusive, and
/// are meaningful only when `has_span` is true.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpanslotSpan {
    pub has_span: bool,
    pub start: usize,
    pub end: usize,
    pub confidence: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("no interior nul"));
}

fn status_of(err: &Error) -> SpanslotStatus {
    match err {
        Error::Io { .. } => SpanslotStatus::Io,
        Error::Parse { .. } => SpanslotStatus::Parse,
        Error::Shape(_) | Error::EmptySequence | Error::Config(_) => SpanslotStatus::InvalidArgument,
        _ => SpanslotStatus::Model,
    }
}

struct Failure(SpanslotStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpanslotStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpanslotStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SpanslotStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SpanslotStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SpanslotStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(SpanslotStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn potentials_arg(p: *const f64, steps: usize) -> Result<Vec<StepPotentials>, Failure> {
    non_null(p, "potentials")?;
    let n = steps
        .checked_mul(SPANSLOT_STEP_WIDTH)
        .ok_or_else(|| Failure(SpanslotStatus::InvalidArgument, "steps too large".into()))?;
    let data = std::slice::from_raw_parts(p, n);
    Ok(data.chunks_exact(SPANSLOT_STEP_WIDTH).map(StepPotentials::from_slice).collect())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn spanslot_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn spanslot_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a saved extractor. `embeddings_path` may be null for extractors with
/// their own embedding table.
///
/// # Safety
/// String arguments must be null or nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spanslot_extractor_load(
    model_path: *const c_char,
    embeddings_path: *const c_char,
    out: *mut *mut SpanslotExtractor,
) -> SpanslotStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let model = str_arg(model_path, "model_path")?;
        let precomputed = if embeddings_path.is_null() {
            None
        } else {
            let p = str_arg(embeddings_path, "embeddings_path")?;
            Some(Arc::new(PrecomputedEmbeddings::load(Path::new(p))?))
        };
        let inner = SlotExtractor::load(Path::new(model), precomputed)?;
        let slot = CString::new(inner.slot.replace('\0', " ")).expect("no interior nul");
        *out = Box::into_raw(Box::new(SpanslotExtractor { inner, slot }));
        Ok(())
    })
}

/// # Safety
/// `extractor` must be null or a handle from [`spanslot_extractor_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spanslot_extractor_free(extractor: *mut SpanslotExtractor) {
    if !extractor.is_null() {
        drop(Box::from_raw(extractor));
    }
}

/// Slot name; valid for the handle's lifetime. Null for a null handle.
///
/// # Safety
/// `extractor` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn spanslot_extractor_slot(extractor: *const SpanslotExtractor) -> *const c_char {
    match extractor.as_ref() {
        Some(e) => e.slot.as_ptr(),
        None => ptr::null(),
    }
}

/// Predicts the slot's span in `text`. `utterance_id` selects the vectors
/// for precomputed-embedding extractors and is otherwise only echoed.
///
/// # Safety
/// `extractor` must be a live handle, strings nul-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spanslot_extractor_predict(
    extractor: *const SpanslotExtractor,
    utterance_id: *const c_char,
    text: *const c_char,
    slot_requested: bool,
    out: *mut SpanslotSpan,
) -> SpanslotStatus {
    guard(|| {
        non_null(out, "out")?;
        non_null(extractor, "extractor")?;
        let ex = &(*extractor).inner;
        let id = str_arg(utterance_id, "utterance_id")?;
        let text = str_arg(text, "text")?;
        let p = ex.predict(id, text, slot_requested)?;
        *out = SpanslotSpan {
            has_span: p.span.is_some(),
            start: p.span.map_or(0, |s| s.start),
            end: p.span.map_or(0, |s| s.end),
            confidence: p.confidence,
        };
        Ok(())
    })
}

/// Number of subword tokens the extractor's vocabulary produces for `text`.
///
/// # Safety
/// `extractor` must be a live handle, `text` nul-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn spanslot_extractor_token_count(
    extractor: *const SpanslotExtractor,
    text: *const c_char,
    out: *mut usize,
) -> SpanslotStatus {
    guard(|| {
        non_null(out, "out")?;
        non_null(extractor, "extractor")?;
        let text = str_arg(text, "text")?;
        *out = (*extractor).inner.vocab.tokenize(text).len();
        Ok(())
    })
}

/// Log partition function of a `steps x 20` potential array.
///
/// # Safety
/// `potentials` must point to `steps * 20` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spanslot_crf_log_partition(
    potentials: *const f64,
    steps: usize,
    out: *mut f64,
) -> SpanslotStatus {
    guard(|| {
        non_null(out, "out")?;
        let pots = potentials_arg(potentials, steps)?;
        *out = crf::log_partition(&pots)?;
        Ok(())
    })
}

/// Best tag sequence, written as `steps` bytes to `out_tags`. With
/// `grammar_mask` the result is always a well-formed single-span sequence.
///
/// # Safety
/// `potentials` must point to `steps * 20` doubles; `out_tags` to `steps` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn spanslot_crf_viterbi(
    potentials: *const f64,
    steps: usize,
    grammar_mask: bool,
    out_tags: *mut u8,
) -> SpanslotStatus {
    guard(|| {
        non_null(out_tags, "out_tags")?;
        let pots = potentials_arg(potentials, steps)?;
        let mask = valid_transitions();
        let tags = crf::viterbi(&pots, grammar_mask.then_some(&mask))?;
        let out = std::slice::from_raw_parts_mut(out_tags, steps);
        for (o, t) in out.iter_mut().zip(tags.tags()) {
            *o = t.index() as u8;
        }
        Ok(())
    })
}
