//! C ABI for loading a woundnet checkpoint, running predictions and
//! computing AUC and Cohen's kappa.
//!
//! Every function returns a [`WmStatus`]. On failure a description is kept
//! per thread and can be read with [`wm_last_error_message`]. Models are
//! opaque [`WmModel`] handles owned by the caller and released with
//! [`wm_model_free`]. A loaded model is immutable and may be used from
//! several threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use woundnet::data::RgbImage;
use woundnet::model::Checkpoint;
use woundnet::service::{Predictor, ServiceError};
use woundnet::stats::{self, StatsError};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Decode = 4,
    Model = 5,
    Degenerate = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque model handle.
pub struct WmModel {
    predictor: Predictor,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(WmStatus, String);

fn fail<T>(status: WmStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> WmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            WmStatus::Panic
        }
    }
}

fn service_failure(e: ServiceError) -> Failure {
    let status = match e {
        ServiceError::Decode(_) => WmStatus::Decode,
        ServiceError::BadRequest(_) => WmStatus::InvalidArgument,
        ServiceError::TooLarge(_) => WmStatus::InvalidArgument,
        ServiceError::Io(_) => WmStatus::Io,
        ServiceError::Internal(_) => WmStatus::Model,
    };
    Failure(status, e.to_string())
}

fn stats_failure(e: StatsError) -> Failure {
    let status = match e {
        StatsError::Degenerate(_) | StatsError::SingleClass => WmStatus::Degenerate,
        _ => WmStatus::InvalidArgument,
    };
    Failure(status, e.to_string())
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a str, Failure> {
    if path.is_null() {
        return fail(WmStatus::NullPointer, "path is null");
    }
    CStr::from_ptr(path)
        .to_str()
        .or_else(|_| fail(WmStatus::InvalidArgument, "path is not valid UTF-8"))
}

unsafe fn model_arg<'a>(model: *const WmModel) -> Result<&'a WmModel, Failure> {
    model
        .as_ref()
        .ok_or(Failure(WmStatus::NullPointer, "model is null".into()))
}

unsafe fn slice_arg<'a, T>(data: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return fail(WmStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

/// The last error raised on this thread, or null. The string stays valid
/// until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn wm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file and self-tests it. On success `*out` receives a
/// handle to release with `wm_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wm_model_load(path: *const c_char, out: *mut *mut WmModel) -> WmStatus {
    guard(|| {
        if out.is_null() {
            return fail(WmStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = path_arg(path)?;
        let checkpoint = Checkpoint::load(path).map_err(|e| {
            let status = if std::path::Path::new(path).exists() {
                WmStatus::Model
            } else {
                WmStatus::Io
            };
            Failure(status, e.to_string())
        })?;
        let predictor = Predictor::new(checkpoint);
        predictor.self_test().map_err(service_failure)?;
        *out = Box::into_raw(Box::new(WmModel { predictor }));
        Ok(())
    })
}

/// Releases a handle from `wm_model_load`. Null is ignored.
///
/// # Safety
/// `model` must come from `wm_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wm_model_free(model: *mut WmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of tasks, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wm_model_num_tasks(model: *const WmModel) -> usize {
    model.as_ref().map_or(0, |m| m.predictor.task_names().len())
}

/// Copies task `index`'s name, NUL-terminated, into `buf` of `len` bytes.
///
/// # Safety
/// `model` must be a live handle and `buf` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn wm_model_task_name(
    model: *const WmModel,
    index: usize,
    buf: *mut c_char,
    len: usize,
) -> WmStatus {
    guard(|| {
        let m = model_arg(model)?;
        let Some(name) = m.predictor.task_names().get(index) else {
            return fail(WmStatus::InvalidArgument, format!("task index {index} out of range"));
        };
        if buf.is_null() {
            return fail(WmStatus::NullPointer, "buf is null");
        }
        if name.len() + 1 > len {
            return fail(
                WmStatus::BufferTooSmall,
                format!("task name needs {} bytes", name.len() + 1),
            );
        }
        ptr::copy_nonoverlapping(name.as_ptr(), buf.cast::<u8>(), name.len());
        *buf.add(name.len()) = 0;
        Ok(())
    })
}

/// The stored decision threshold of task `index`.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wm_model_threshold(model: *const WmModel, index: usize, out: *mut f64) -> WmStatus {
    guard(|| {
        let m = model_arg(model)?;
        if out.is_null() {
            return fail(WmStatus::NullPointer, "out is null");
        }
        match m.predictor.checkpoint().thresholds.get(index) {
            Some(&t) => {
                *out = t;
                Ok(())
            }
            None => fail(WmStatus::InvalidArgument, format!("task index {index} out of range")),
        }
    })
}

unsafe fn write_probs(m: &WmModel, image: &RgbImage, out: *mut f64, len: usize) -> Result<(), Failure> {
    let tasks = m.predictor.task_names().len();
    if out.is_null() {
        return fail(WmStatus::NullPointer, "probabilities buffer is null");
    }
    if len < tasks {
        return fail(WmStatus::BufferTooSmall, format!("need room for {tasks} probabilities"));
    }
    let probs = m.predictor.probabilities(image).map_err(service_failure)?;
    ptr::copy_nonoverlapping(probs.as_ptr(), out, tasks);
    Ok(())
}

/// Decodes PNG or PPM `data` and writes one positive probability per task
/// to `probs` (capacity `probs_len`).
///
/// # Safety
/// `data` must be readable for `len` bytes and `probs` writable for
/// `probs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn wm_model_predict_bytes(
    model: *const WmModel,
    data: *const u8,
    len: usize,
    probs: *mut f64,
    probs_len: usize,
) -> WmStatus {
    guard(|| {
        let m = model_arg(model)?;
        let bytes = slice_arg(data, len, "data")?;
        let image = RgbImage::decode(bytes).map_err(|e| Failure(WmStatus::Decode, e.to_string()))?;
        write_probs(m, &image, probs, probs_len)
    })
}

/// Like `wm_model_predict_bytes` for an image file.
///
/// # Safety
/// `path` must be NUL-terminated and `probs` writable for `probs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn wm_model_predict_file(
    model: *const WmModel,
    path: *const c_char,
    probs: *mut f64,
    probs_len: usize,
) -> WmStatus {
    guard(|| {
        let m = model_arg(model)?;
        let path = path_arg(path)?;
        let bytes = std::fs::read(path).map_err(|e| Failure(WmStatus::Io, format!("{path}: {e}")))?;
        let image = RgbImage::decode(&bytes).map_err(|e| Failure(WmStatus::Decode, e.to_string()))?;
        write_probs(m, &image, probs, probs_len)
    })
}

/// Mann-Whitney AUC of `n` scores against binary labels.
///
/// # Safety
/// `scores` and `labels` must be readable for `n` elements; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wm_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> WmStatus {
    guard(|| {
        if out.is_null() {
            return fail(WmStatus::NullPointer, "out is null");
        }
        let s = slice_arg(scores, n, "scores")?;
        let l = slice_arg(labels, n, "labels")?;
        *out = stats::auc(s, l).map_err(stats_failure)?;
        Ok(())
    })
}

/// Cohen's kappa of two binary answer vectors. Returns
/// `WM_STATUS_DEGENERATE` when both raters are constant and agree.
///
/// # Safety
/// `a` and `b` must be readable for `n` elements; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wm_cohens_kappa(a: *const u8, b: *const u8, n: usize, out: *mut f64) -> WmStatus {
    guard(|| {
        if out.is_null() {
            return fail(WmStatus::NullPointer, "out is null");
        }
        let a = slice_arg(a, n, "a")?;
        let b = slice_arg(b, n, "b")?;
        match stats::cohens_kappa(a, b).map_err(stats_failure)? {
            Some(k) => {
                *out = k;
                Ok(())
            }
            None => fail(
                WmStatus::Degenerate,
                "kappa is undefined: both raters give one constant answer",
            ),
        }
    })
}
