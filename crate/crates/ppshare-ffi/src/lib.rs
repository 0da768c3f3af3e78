//! C ABI for the ppshare library. The committed header lives at
//! `include/ppshare.h`; a test regenerates it with cbindgen and fails if
//! the two drift apart.
//!
//! Conventions:
//! - objects cross the boundary as opaque handles; release each one
//!   exactly once with its matching `*_free`
//! - fallible calls return `ppshare_status`; on failure
//!   `ppshare_last_error` holds a thread-local description, valid until
//!   the next failing call on the same thread
//! - strings returned through `char **` out-params are NUL-terminated
//!   UTF-8 owned by the caller; release them with `ppshare_string_free`
//! - out-params are written only when the call returns `PPSHARE_STATUS_OK`

#![allow(non_camel_case_types)]
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ppshare::analysis::build_class_graph;
use ppshare::dataset::{
    load_dataset, save_dataset, synthesize, FeatureDataset, PatchGrid, SynthSpec,
};
use ppshare::error::Error;
use ppshare::model::{load_model, save_model, Model};
use ppshare::prune::{run_prune, PruneConfig};
use ppshare::theorem::{run_sweep, ConstructSpec};
use ppshare::train::{accuracy, train_phase1, TrainConfig};

/// Outcome of a C API call. Anything but `OK` leaves a message in
/// `ppshare_last_error`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ppshare_status {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    Io = 3,
    /// JSON could not be parsed or serialized.
    Json = 4,
    /// A file did not look like the expected format.
    Format = 5,
    /// A file matched the format but its payload was inconsistent.
    Corruption = 6,
    /// An argument or configuration value was rejected.
    Validation = 7,
    /// A library-internal guarantee was observed broken.
    Invariant = 8,
    /// The requested construction has no solution under these parameters.
    Infeasible = 9,
    /// A panic was caught at the boundary.
    Panic = 10,
}

/// Loaded patch-feature dataset.
pub struct ppshare_dataset(FeatureDataset);

/// Prototype-pool classifier.
pub struct ppshare_model(Model);

/// Output format for the class-similarity graph.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ppshare_graph_format {
    Dot = 0,
    Json = 1,
}

/// Counters from one randomized logit-bound sweep.
/// `clean` is true when no assumption check, bound, or protected
/// prediction failed across the whole sweep.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ppshare_verify_result {
    pub trials: usize,
    pub assumption_failures: usize,
    pub bound_violations: usize,
    /// trials whose pre-merge margin met the preservation threshold
    pub margin_holds: usize,
    /// margin held but the prediction moved; must stay zero
    pub flips_under_margin: usize,
    pub clean: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(err: &Error) -> ppshare_status {
    set_error(&err.to_string());
    match err {
        Error::Io(_) => ppshare_status::Io,
        Error::Json(_) => ppshare_status::Json,
        Error::Format(_) => ppshare_status::Format,
        Error::Corruption(_) => ppshare_status::Corruption,
        Error::Validation(_) => ppshare_status::Validation,
        Error::Invariant(_) => ppshare_status::Invariant,
        Error::Infeasible(_) => ppshare_status::Infeasible,
    }
}

fn null_arg(name: &str) -> ppshare_status {
    set_error(&format!("{name} must not be NULL"));
    ppshare_status::NullArgument
}

/// Catches panics so they never unwind across the C boundary.
fn guarded(f: impl FnOnce() -> ppshare_status) -> ppshare_status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_error(&format!("internal panic: {msg}"));
            ppshare_status::Panic
        }
    }
}

unsafe fn utf8_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, ppshare_status> {
    if ptr.is_null() {
        return Err(null_arg(name));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{name} is not valid UTF-8"));
        ppshare_status::InvalidUtf8
    })
}

/// Parses an optional JSON config string, falling back to defaults on NULL.
unsafe fn config_arg<T: serde::de::DeserializeOwned + Default>(
    ptr: *const c_char,
    name: &str,
) -> Result<T, ppshare_status> {
    if ptr.is_null() {
        return Ok(T::default());
    }
    let text = utf8_arg(ptr, name)?;
    serde_json::from_str(text).map_err(|e| {
        set_error(&format!("{name}: {e}"));
        ppshare_status::Json
    })
}

fn export_string(s: String, out: *mut *mut c_char) -> ppshare_status {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            ppshare_status::Ok
        }
        Err(_) => {
            set_error("produced text contained an interior NUL byte");
            ppshare_status::Invariant
        }
    }
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn ppshare_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message from the most recent failing call on this thread. Empty
/// string if nothing failed yet. The pointer stays valid until the next
/// failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn ppshare_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Frees a string returned through a `char **` out-param. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn ppshare_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------------
// datasets

/// Loads a PFM dataset file.
#[no_mangle]
pub unsafe extern "C" fn ppshare_dataset_load(
    path: *const c_char,
    out: *mut *mut ppshare_dataset,
) -> ppshare_status {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let path = match utf8_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_dataset(path) {
            Ok(data) => {
                *out = Box::into_raw(Box::new(ppshare_dataset(data)));
                ppshare_status::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Writes a dataset back out as a PFM file.
#[no_mangle]
pub unsafe extern "C" fn ppshare_dataset_save(
    dataset: *const ppshare_dataset,
    path: *const c_char,
) -> ppshare_status {
    guarded(|| {
        let Some(dataset) = dataset.as_ref() else {
            return null_arg("dataset");
        };
        let path = match utf8_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match save_dataset(&dataset.0, path) {
            Ok(()) => ppshare_status::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Generates a synthetic train/val pair from a JSON generator spec.
/// `out_plan_json` may be NULL; when given it receives the cluster plan
/// used to build the data.
#[no_mangle]
pub unsafe extern "C" fn ppshare_dataset_synthesize(
    spec_json: *const c_char,
    seed: u64,
    out_train: *mut *mut ppshare_dataset,
    out_val: *mut *mut ppshare_dataset,
    out_plan_json: *mut *mut c_char,
) -> ppshare_status {
    guarded(|| {
        if out_train.is_null() {
            return null_arg("out_train");
        }
        if out_val.is_null() {
            return null_arg("out_val");
        }
        let text = match utf8_arg(spec_json, "spec_json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let spec: SynthSpec = match serde_json::from_str(text) {
            Ok(s) => s,
            Err(e) => {
                set_error(&format!("spec_json: {e}"));
                return ppshare_status::Json;
            }
        };
        let (train, val, plan) = match synthesize(&spec, seed) {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        if !out_plan_json.is_null() {
            let plan_text = match serde_json::to_string_pretty(&plan) {
                Ok(t) => t,
                Err(e) => return fail(&Error::Json(e)),
            };
            let status = export_string(plan_text, out_plan_json);
            if status != ppshare_status::Ok {
                return status;
            }
        }
        *out_train = Box::into_raw(Box::new(ppshare_dataset(train)));
        *out_val = Box::into_raw(Box::new(ppshare_dataset(val)));
        ppshare_status::Ok
    })
}

/// Frees a dataset handle. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn ppshare_dataset_free(dataset: *mut ppshare_dataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of images; 0 if the handle is NULL.
#[no_mangle]
pub unsafe extern "C" fn ppshare_dataset_num_images(dataset: *const ppshare_dataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

/// Number of classes; 0 if the handle is NULL.
#[no_mangle]
pub unsafe extern "C" fn ppshare_dataset_num_classes(dataset: *const ppshare_dataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.num_classes)
}

/// Patch feature dimension; 0 if the handle is NULL.
#[no_mangle]
pub unsafe extern "C" fn ppshare_dataset_feat_dim(dataset: *const ppshare_dataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.feat_dim)
}

// ---------------------------------------------------------------------
// models

/// Loads a model checkpoint.
#[no_mangle]
pub unsafe extern "C" fn ppshare_model_load(
    path: *const c_char,
    out: *mut *mut ppshare_model,
) -> ppshare_status {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let path = match utf8_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_model(path) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(ppshare_model(model)));
                ppshare_status::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Writes a model checkpoint.
#[no_mangle]
pub unsafe extern "C" fn ppshare_model_save(
    model: *const ppshare_model,
    path: *const c_char,
) -> ppshare_status {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return null_arg("model");
        };
        let path = match utf8_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match save_model(&model.0, path) {
            Ok(()) => ppshare_status::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Frees a model handle. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn ppshare_model_free(model: *mut ppshare_model) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output classes; 0 if the handle is NULL.
#[no_mangle]
pub unsafe extern "C" fn ppshare_model_num_classes(model: *const ppshare_model) -> usize {
    model.as_ref().map_or(0, |m| m.0.num_classes())
}

/// Number of live prototypes; 0 if the handle is NULL.
#[no_mangle]
pub unsafe extern "C" fn ppshare_model_pool_size(model: *const ppshare_model) -> usize {
    model.as_ref().map_or(0, |m| m.0.pool.alive_count())
}

/// Similarity floor epsilon; NaN if the handle is NULL.
#[no_mangle]
pub unsafe extern "C" fn ppshare_model_epsilon(model: *const ppshare_model) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.0.epsilon)
}

/// Trains a model on a dataset. `val` may be NULL; `config_json` may be
/// NULL for defaults and otherwise holds a training-config JSON object.
#[no_mangle]
pub unsafe extern "C" fn ppshare_model_train(
    train: *const ppshare_dataset,
    val: *const ppshare_dataset,
    config_json: *const c_char,
    out: *mut *mut ppshare_model,
) -> ppshare_status {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let Some(train) = train.as_ref() else {
            return null_arg("train");
        };
        let cfg: TrainConfig = match config_arg(config_json, "config_json") {
            Ok(c) => c,
            Err(s) => return s,
        };
        match train_phase1(&train.0, val.as_ref().map(|v| &v.0), &cfg) {
            Ok((model, _)) => {
                *out = Box::into_raw(Box::new(ppshare_model(model)));
                ppshare_status::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Merge-prunes the model in place. `val` may be NULL. The config
/// arguments may be NULL for defaults. `out_log_json` may be NULL; when
/// given it receives the step-by-step prune log.
#[no_mangle]
pub unsafe extern "C" fn ppshare_model_prune(
    model: *mut ppshare_model,
    train: *const ppshare_dataset,
    val: *const ppshare_dataset,
    train_config_json: *const c_char,
    prune_config_json: *const c_char,
    out_log_json: *mut *mut c_char,
) -> ppshare_status {
    guarded(|| {
        let Some(model) = model.as_mut() else {
            return null_arg("model");
        };
        let Some(train) = train.as_ref() else {
            return null_arg("train");
        };
        let tcfg: TrainConfig = match config_arg(train_config_json, "train_config_json") {
            Ok(c) => c,
            Err(s) => return s,
        };
        let pcfg: PruneConfig = match config_arg(prune_config_json, "prune_config_json") {
            Ok(c) => c,
            Err(s) => return s,
        };
        let log = match run_prune(
            &mut model.0,
            &train.0,
            val.as_ref().map(|v| &v.0),
            &tcfg,
            &pcfg,
        ) {
            Ok(log) => log,
            Err(e) => return fail(&e),
        };
        if out_log_json.is_null() {
            return ppshare_status::Ok;
        }
        match serde_json::to_string_pretty(&log) {
            Ok(text) => export_string(text, out_log_json),
            Err(e) => fail(&Error::Json(e)),
        }
    })
}

/// Predicts the class of one image given as `num_patches * feat_dim`
/// floats in patch-major order.
#[no_mangle]
pub unsafe extern "C" fn ppshare_model_predict(
    model: *const ppshare_model,
    patches: *const f32,
    num_patches: usize,
    feat_dim: usize,
    out_class: *mut usize,
) -> ppshare_status {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return null_arg("model");
        };
        if out_class.is_null() {
            return null_arg("out_class");
        }
        let grid = match grid_arg(patches, num_patches, feat_dim) {
            Ok(g) => g,
            Err(s) => return s,
        };
        match model.0.predict(&grid, feat_dim) {
            Ok(class) => {
                *out_class = class;
                ppshare_status::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Computes per-class logits for one image. `out_logits` must hold
/// exactly `ppshare_model_num_classes` values.
#[no_mangle]
pub unsafe extern "C" fn ppshare_model_logits(
    model: *const ppshare_model,
    patches: *const f32,
    num_patches: usize,
    feat_dim: usize,
    out_logits: *mut f64,
    out_len: usize,
) -> ppshare_status {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return null_arg("model");
        };
        if out_logits.is_null() {
            return null_arg("out_logits");
        }
        if out_len != model.0.num_classes() {
            set_error(&format!(
                "out_len is {out_len} but the model has {} classes",
                model.0.num_classes()
            ));
            return ppshare_status::Validation;
        }
        let grid = match grid_arg(patches, num_patches, feat_dim) {
            Ok(g) => g,
            Err(s) => return s,
        };
        match model.0.logits(&grid, feat_dim) {
            Ok(logits) => {
                std::ptr::copy_nonoverlapping(logits.as_ptr(), out_logits, out_len);
                ppshare_status::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

unsafe fn grid_arg(
    patches: *const f32,
    num_patches: usize,
    feat_dim: usize,
) -> Result<PatchGrid, ppshare_status> {
    if patches.is_null() {
        return Err(null_arg("patches"));
    }
    let Some(len) = num_patches.checked_mul(feat_dim).filter(|&n| n > 0) else {
        set_error("num_patches and feat_dim must be nonzero and their product must not overflow");
        return Err(ppshare_status::Validation);
    };
    let flat = std::slice::from_raw_parts(patches, len).to_vec();
    Ok(PatchGrid::new(0, flat))
}

/// Fraction of images the model labels correctly.
#[no_mangle]
pub unsafe extern "C" fn ppshare_model_accuracy(
    model: *const ppshare_model,
    dataset: *const ppshare_dataset,
    out_accuracy: *mut f64,
) -> ppshare_status {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return null_arg("model");
        };
        let Some(dataset) = dataset.as_ref() else {
            return null_arg("dataset");
        };
        if out_accuracy.is_null() {
            return null_arg("out_accuracy");
        }
        match accuracy(&model.0, &dataset.0) {
            Ok(acc) => {
                *out_accuracy = acc;
                ppshare_status::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Renders the prototype-sharing class graph as DOT or JSON text.
#[no_mangle]
pub unsafe extern "C" fn ppshare_model_class_graph(
    model: *const ppshare_model,
    format: ppshare_graph_format,
    out_text: *mut *mut c_char,
) -> ppshare_status {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return null_arg("model");
        };
        if out_text.is_null() {
            return null_arg("out_text");
        }
        let graph = build_class_graph(&model.0);
        let text = match format {
            ppshare_graph_format::Dot => graph.to_dot(),
            ppshare_graph_format::Json => match graph.to_json() {
                Ok(t) => t,
                Err(e) => return fail(&e),
            },
        };
        export_string(text, out_text)
    })
}

// ---------------------------------------------------------------------
// logit-bound verification

/// Runs `trials` randomized constructed merge instances at one
/// perturbation level `delta` in (0, 1) and reports aggregate counters.
#[no_mangle]
pub unsafe extern "C" fn ppshare_verify_bounds(
    delta: f64,
    trials: usize,
    base_seed: u64,
    out: *mut ppshare_verify_result,
) -> ppshare_status {
    guarded(|| {
        if out.is_null() {
            return null_arg("out");
        }
        let spec = ConstructSpec::default();
        match run_sweep(&spec, delta, trials, base_seed) {
            Ok(summary) => {
                *out = ppshare_verify_result {
                    trials: summary.trials,
                    assumption_failures: summary.assumption_failures,
                    bound_violations: summary.bound_violations,
                    margin_holds: summary.margin_hold_count,
                    flips_under_margin: summary.flips_under_margin,
                    clean: summary.clean(),
                };
                ppshare_status::Ok
            }
            Err(e) => fail(&e),
        }
    })
}
