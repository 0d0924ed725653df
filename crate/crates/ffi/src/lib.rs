//! C ABI over the dermforge classifier.
//!
//! Every function returns a [`DfStatus`]; on failure the message is available
//! from [`df_last_error`] on the same thread until the next call. Handles are
//! opaque and must be released with [`df_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::OnceLock;

use dermforge::checkpoint::{load_checkpoint, Checkpoint};
use dermforge::dataset::ClassLabel;
use dermforge::metrics::roc_binary;
use dermforge::nn::NUM_CLASSES;
use dermforge::trainer::{predict, predict_rgb, Prediction};
use dermforge::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Decode = 4,
    Checkpoint = 5,
    Version = 6,
    Internal = 7,
}

/// Loaded checkpoint. Safe to share between threads for prediction.
pub struct DfModel {
    checkpoint: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DfStatus {
    match e {
        Error::Io(_) => DfStatus::Io,
        Error::Decode { .. } => DfStatus::Decode,
        Error::Checkpoint(_) => DfStatus::Checkpoint,
        Error::Version { .. } => DfStatus::Version,
        Error::Argument(_) | Error::Shape(_) | Error::Parse { .. } => DfStatus::InvalidArgument,
        Error::State(_) | Error::NonFinite { .. } => DfStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (DfStatus, String)>) -> DfStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DfStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (DfStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (DfStatus, String) {
    (DfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, (DfStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (DfStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
    Ok(Path::new(s))
}

unsafe fn write_prediction(p: &Prediction, probs_out: *mut f32, label_out: *mut u32) {
    if !probs_out.is_null() {
        ptr::copy_nonoverlapping(p.probs.as_ptr(), probs_out, NUM_CLASSES);
    }
    if !label_out.is_null() {
        *label_out = p.label.index() as u32;
    }
}

/// Message describing the last failure on this thread, or an empty string.
/// The pointer stays valid until the next dermforge call on this thread.
#[no_mangle]
pub extern "C" fn df_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn df_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Number of output classes (7).
#[no_mangle]
pub extern "C" fn df_class_count() -> u32 {
    NUM_CLASSES as u32
}

fn class_strings() -> &'static [(CString, CString)] {
    static TABLE: OnceLock<Vec<(CString, CString)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        ClassLabel::ALL
            .iter()
            .map(|c| {
                (
                    CString::new(c.code()).unwrap(),
                    CString::new(c.full_name()).unwrap(),
                )
            })
            .collect()
    })
}

/// Short diagnosis code for class `index` (e.g. "nv"), or null when out of range.
#[no_mangle]
pub extern "C" fn df_class_code(index: u32) -> *const c_char {
    class_strings()
        .get(index as usize)
        .map_or(ptr::null(), |s| s.0.as_ptr())
}

/// Human-readable class name, or null when out of range.
#[no_mangle]
pub extern "C" fn df_class_name(index: u32) -> *const c_char {
    class_strings()
        .get(index as usize)
        .map_or(ptr::null(), |s| s.1.as_ptr())
}

/// Loads a checkpoint file into a new handle written to `*out`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn df_model_load(path: *const c_char, out: *mut *mut DfModel) -> DfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = path_arg(path)?;
        let checkpoint = load_checkpoint(path).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DfModel { checkpoint }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`df_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn df_model_free(model: *mut DfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Classifies an image file. `probs_out` receives 7 floats and `label_out`
/// the argmax class index; either may be null.
///
/// # Safety
/// `model` must be a live handle, `path` a NUL-terminated string, and
/// `probs_out` (if non-null) must have room for 7 floats.
#[no_mangle]
pub unsafe extern "C" fn df_predict_file(
    model: *const DfModel,
    path: *const c_char,
    probs_out: *mut f32,
    label_out: *mut u32,
) -> DfStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let path = path_arg(path)?;
        let p = predict(&model.checkpoint, path).map_err(lib_err)?;
        write_prediction(&p, probs_out, label_out);
        Ok(())
    })
}

/// Classifies packed row-major 8-bit RGB pixels of any size.
///
/// # Safety
/// `pixels` must point to `width * height * 3` bytes; other pointers as for
/// [`df_predict_file`].
#[no_mangle]
pub unsafe extern "C" fn df_predict_rgb(
    model: *const DfModel,
    pixels: *const u8,
    width: u32,
    height: u32,
    probs_out: *mut f32,
    label_out: *mut u32,
) -> DfStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        let (w, h) = (width as usize, height as usize);
        let len = w
            .checked_mul(h)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| {
                (
                    DfStatus::InvalidArgument,
                    format!("{width}x{height} image is too large"),
                )
            })?;
        let rgb = std::slice::from_raw_parts(pixels, len);
        let p = predict_rgb(&model.checkpoint, rgb, w, h).map_err(lib_err)?;
        write_prediction(&p, probs_out, label_out);
        Ok(())
    })
}

/// Area under the ROC curve of `scores` against binary truth (`positive[i]`
/// non-zero means positive). Fails when the truth holds only one class.
///
/// # Safety
/// `scores` and `positive` must each point to `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn df_auc(
    scores: *const f64,
    positive: *const u8,
    n: usize,
    out: *mut f64,
) -> DfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if n == 0 {
            return Err((DfStatus::InvalidArgument, "no scores".into()));
        }
        if scores.is_null() || positive.is_null() {
            return Err(null("input"));
        }
        let scores = std::slice::from_raw_parts(scores, n);
        let positive: Vec<bool> = std::slice::from_raw_parts(positive, n)
            .iter()
            .map(|&b| b != 0)
            .collect();
        let curve = roc_binary(scores, &positive).ok_or_else(|| {
            (
                DfStatus::InvalidArgument,
                "truth has a single class; AUC undefined".to_string(),
            )
        })?;
        *out = curve.auc;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_tables_match_core() {
        for (i, c) in ClassLabel::ALL.iter().enumerate() {
            let code = unsafe { CStr::from_ptr(df_class_code(i as u32)) };
            let name = unsafe { CStr::from_ptr(df_class_name(i as u32)) };
            assert_eq!(code.to_str().unwrap(), c.code());
            assert_eq!(name.to_str().unwrap(), c.full_name());
        }
        assert!(df_class_code(7).is_null());
    }
}
