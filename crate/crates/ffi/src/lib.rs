//! C interface: opaque dataset and model handles, integer status codes, and a
//! thread-local message for the last failure.
//!
//! Every function taking a `config` accepts a NUL-terminated TOML document in
//! the command-line config format, or NULL for the defaults. Handles returned
//! through `out` pointers are owned by the caller and released with the
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use metashift::checkpoint;
use metashift::config::{ExperimentConfig, Prepared};
use metashift::experiment::{run_meta_test, run_meta_train, run_pretrain};
use metashift::meta::{ModelState, Phase};
use metashift::metrics::MetricsLog;
use metashift::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Checkpoint = 5,
    Config = 6,
    Numeric = 7,
    Frozen = 8,
    Data = 9,
    Panic = 10,
}

/// A loaded or generated dataset with its class split.
pub struct MsDataset {
    inner: Prepared,
}

/// Frozen extractor, modulation parameters and classifier initialisation.
pub struct MsModel {
    inner: ModelState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MsStatus {
    match e {
        Error::Shape { .. } | Error::GraphMismatch | Error::NonScalarLoss(_) | Error::InvalidArgument(_) => {
            MsStatus::InvalidArgument
        }
        Error::NonFinite { .. } => MsStatus::Numeric,
        Error::Frozen(_) => MsStatus::Frozen,
        Error::Io { .. } => MsStatus::Io,
        Error::Format { .. } => MsStatus::Format,
        Error::Data(_) => MsStatus::Data,
        Error::Checkpoint(_) => MsStatus::Checkpoint,
        Error::Config(_) => MsStatus::Config,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MsStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {}", what));
            MsStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned());
            set_error(&format!("internal panic: {}", msg.unwrap_or_default()));
            MsStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Lib(Error::InvalidArgument(format!("{} is not UTF-8", what))))
}

unsafe fn config(p: *const c_char) -> Result<ExperimentConfig, Fail> {
    if p.is_null() {
        return Ok(ExperimentConfig::default());
    }
    Ok(ExperimentConfig::from_toml(text(p, "config")?)?)
}

unsafe fn get<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ms_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ms_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds the dataset described by the config's `dataset` section.
///
/// # Safety
/// `config` is NULL or a NUL-terminated string; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_dataset_new(config: *const c_char, out: *mut *mut MsDataset) -> MsStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = ptr::null_mut();
        let cfg = self::config(config)?;
        put(out, MsDataset { inner: cfg.prepare()? })
    })
}

/// Number of classes in the whole dataset.
///
/// # Safety
/// `dataset` is NULL or a live handle; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_dataset_num_classes(dataset: *const MsDataset, out: *mut usize) -> MsStatus {
    guard(|| {
        let ds = get(dataset, "dataset")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = ds.inner.dataset.num_classes();
        Ok(())
    })
}

/// # Safety
/// `dataset` is NULL or a handle from `ms_dataset_new`, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ms_dataset_free(dataset: *mut MsDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Pretrains an extractor on the train classes and returns an un-meta-trained model.
///
/// # Safety
/// `dataset` is a live handle; `config` is NULL or a NUL-terminated string;
/// `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_model_pretrain(dataset: *const MsDataset, config: *const c_char, out: *mut *mut MsModel) -> MsStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = ptr::null_mut();
        let ds = get(dataset, "dataset")?;
        let cfg = self::config(config)?;
        let (state, _) = run_pretrain(&cfg, &ds.inner, &mut MetricsLog::disabled())?;
        put(out, MsModel { inner: state })
    })
}

/// Meta-trains the config's `meta.mode` on the model's frozen extractor,
/// replacing the model's meta-learned parameters.
///
/// # Safety
/// `dataset` and `model` are live handles; `config` is NULL or a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ms_model_meta_train(dataset: *const MsDataset, model: *mut MsModel, config: *const c_char) -> MsStatus {
    guard(|| {
        let ds = get(dataset, "dataset")?;
        let model = model.as_mut().ok_or(Fail::Null("model"))?;
        let cfg = self::config(config)?;
        let (state, _) = run_meta_train(&cfg, &ds.inner, model.inner.extractor.clone(), cfg.meta.mode, &mut MetricsLog::disabled())?;
        model.inner = state;
        Ok(())
    })
}

/// Mean meta-test accuracy and its 95% half-width over `eval.tasks` test episodes.
///
/// # Safety
/// `dataset` and `model` are live handles; `config` is NULL or a
/// NUL-terminated string; `mean` and `half_width` are valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ms_model_meta_test(
    dataset: *const MsDataset,
    model: *const MsModel,
    config: *const c_char,
    mean: *mut f64,
    half_width: *mut f64,
) -> MsStatus {
    guard(|| {
        let ds = get(dataset, "dataset")?;
        let model = get(model, "model")?;
        if mean.is_null() || half_width.is_null() {
            return Err(Fail::Null("mean/half_width"));
        }
        let cfg = self::config(config)?;
        let report = run_meta_test(&cfg, &ds.inner, &model.inner, &mut MetricsLog::disabled())?;
        *mean = report.mean;
        *half_width = report.half_width;
        Ok(())
    })
}

/// 1 when the model has been meta-trained, 0 when it is pretrain-only.
///
/// # Safety
/// `model` is a live handle; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_model_is_meta_trained(model: *const MsModel, out: *mut i32) -> MsStatus {
    guard(|| {
        let model = get(model, "model")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = (model.inner.phase == Phase::Meta) as i32;
        Ok(())
    })
}

/// Number of meta-learned scalars.
///
/// # Safety
/// `model` is a live handle; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_model_meta_param_count(model: *const MsModel, out: *mut usize) -> MsStatus {
    guard(|| {
        let model = get(model, "model")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = model.inner.meta_param_count();
        Ok(())
    })
}

/// # Safety
/// `model` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ms_model_save(model: *const MsModel, path: *const c_char) -> MsStatus {
    guard(|| {
        let model = get(model, "model")?;
        checkpoint::save(&model.inner, Path::new(text(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `path` is a NUL-terminated string; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_model_load(path: *const c_char, out: *mut *mut MsModel) -> MsStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = ptr::null_mut();
        let state = checkpoint::load(Path::new(text(path, "path")?))?;
        put(out, MsModel { inner: state })
    })
}

/// # Safety
/// `model` is NULL or a handle from this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ms_model_free(model: *mut MsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
