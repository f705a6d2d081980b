//! C ABI for the adaptive length-penalty trainer.
//!
//! Foreign callers work with three opaque handle types (task sets, training
//! configurations, training histories), created and destroyed through paired
//! constructor/free functions. Every fallible call returns a [`LeashStatus`];
//! on failure a per-thread message is available through
//! [`leash_last_error_message`]. The matching declarations live in
//! `include/leash.h`, which is maintained by hand to mirror this file.
//!
//! Conventions:
//! - Returned strings are NUL-terminated, owned by the caller, and must be
//!   released with [`leash_string_free`].
//! - Passing NULL where a handle or out-pointer is expected yields
//!   `LEASH_ERR_NULL_ARG`; no call dereferences NULL.
//! - Handles are not thread-safe; callers must not share one handle across
//!   threads without their own synchronization.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use leash_core::analysis::{count_keywords, KeywordGroups};
use leash_core::dual::ControllerKind;
use leash_core::envsim::TaskSet;
use leash_core::shaping::PenaltyKind;
use leash_core::trainer::{train, TrainConfig, TrainHistory};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeashStatus {
    Ok = 0,
    NullArg = 1,
    Utf8 = 2,
    Parse = 3,
    InvalidConfig = 4,
    Runtime = 5,
    Io = 6,
    OutOfRange = 7,
    Panic = 8,
}

/// Metric column selectors for [`leash_history_metric`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeashMetric {
    SatisfactionRate = 0,
    Lambda = 1,
    EffectivePenalty = 2,
    MeanLength = 3,
    MeanAccuracy = 4,
    MeanShapedReward = 5,
    ViolationEstimate = 6,
}

/// Opaque task-set handle.
pub struct LeashTaskSet(TaskSet);
/// Opaque training-configuration handle.
pub struct LeashTrainConfig(TrainConfig);
/// Opaque training-history handle.
pub struct LeashTrainHistory(TrainHistory);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " "))
        .unwrap_or_else(|_| CString::new("error message unavailable").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn fail(status: LeashStatus, message: impl std::fmt::Display) -> LeashStatus {
    set_last_error(message.to_string());
    status
}

fn status_for(err: &leash_core::Error) -> LeashStatus {
    use leash_core::Error::*;
    match err {
        Io { .. } => LeashStatus::Io,
        Parse { .. } => LeashStatus::Parse,
        InvalidConfig(_) | InvalidTask { .. } | InvalidTaskSet(_) | ZeroTarget => {
            LeashStatus::InvalidConfig
        }
        BucketOutOfRange { .. } | LengthExceedsCap { .. } | EnumerationCapExceeded { .. } => {
            LeashStatus::OutOfRange
        }
        _ => LeashStatus::Runtime,
    }
}

/// Run an FFI body, translating panics into `LEASH_ERR_PANIC` instead of
/// unwinding across the ABI.
fn guarded(body: impl FnOnce() -> LeashStatus) -> LeashStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(LeashStatus::Panic, "internal panic"),
    }
}

/// Read a required NUL-terminated UTF-8 argument.
///
/// # Safety
/// `ptr` must be NULL or point to a NUL-terminated string valid for the call.
unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, LeashStatus> {
    if ptr.is_null() {
        return Err(fail(LeashStatus::NullArg, "string argument is NULL"));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|e| fail(LeashStatus::Utf8, format!("argument is not UTF-8: {e}")))
}

fn string_out(value: String, out: *mut *mut c_char) -> LeashStatus {
    let Ok(c) = CString::new(value) else {
        return fail(LeashStatus::Runtime, "output contained an interior NUL byte");
    };
    unsafe { *out = c.into_raw() };
    LeashStatus::Ok
}

/// Version of the library as a static string; do not free.
#[no_mangle]
pub extern "C" fn leash_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// The message of the most recent failure on this thread, or NULL when no
/// failure has occurred. Free with [`leash_string_free`].
#[no_mangle]
pub extern "C" fn leash_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| match slot.borrow().as_ref() {
        Some(c) => c.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a pointer previously returned by a `leash_*` function
/// that documents this deallocator, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn leash_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Create the built-in benchmark task set.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn leash_task_set_default(out: *mut *mut LeashTaskSet) -> LeashStatus {
    guarded(|| {
        if out.is_null() {
            return fail(LeashStatus::NullArg, "out pointer is NULL");
        }
        let set = TaskSet::default_benchmark();
        unsafe { *out = Box::into_raw(Box::new(LeashTaskSet(set))) };
        LeashStatus::Ok
    })
}

/// Parse a task set from its JSON document.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn leash_task_set_from_json(
    json: *const c_char,
    out: *mut *mut LeashTaskSet,
) -> LeashStatus {
    guarded(|| {
        if out.is_null() {
            return fail(LeashStatus::NullArg, "out pointer is NULL");
        }
        let json = match unsafe { utf8_arg(json) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        match TaskSet::from_json(json) {
            Ok(set) => {
                unsafe { *out = Box::into_raw(Box::new(LeashTaskSet(set))) };
                LeashStatus::Ok
            }
            Err(e) => fail(LeashStatus::Parse, e),
        }
    })
}

/// Serialize a task set to JSON. Free the result with [`leash_string_free`].
///
/// # Safety
/// `set` must be a live handle; `out` must be a valid string slot.
#[no_mangle]
pub unsafe extern "C" fn leash_task_set_to_json(
    set: *const LeashTaskSet,
    out: *mut *mut c_char,
) -> LeashStatus {
    guarded(|| {
        if set.is_null() || out.is_null() {
            return fail(LeashStatus::NullArg, "handle or out pointer is NULL");
        }
        string_out(unsafe { &*set }.0.to_json(), out)
    })
}

/// Number of tasks in the set; 0 for NULL.
///
/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn leash_task_set_len(set: *const LeashTaskSet) -> usize {
    if set.is_null() {
        return 0;
    }
    unsafe { &*set }.0.tasks.len()
}

/// # Safety
/// `set` must be NULL or a live handle, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn leash_task_set_free(set: *mut LeashTaskSet) {
    if !set.is_null() {
        drop(unsafe { Box::from_raw(set) });
    }
}

/// Create a configuration with library defaults for the given budget,
/// iteration count, and seed.
///
/// # Safety
/// `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn leash_train_config_new(
    target_length: u64,
    iterations: u64,
    global_seed: u64,
    out: *mut *mut LeashTrainConfig,
) -> LeashStatus {
    guarded(|| {
        if out.is_null() {
            return fail(LeashStatus::NullArg, "out pointer is NULL");
        }
        let cfg = TrainConfig::new(target_length as usize, iterations as usize, global_seed);
        if let Err(e) = cfg.validate() {
            return fail(status_for(&e), e);
        }
        unsafe { *out = Box::into_raw(Box::new(LeashTrainConfig(cfg))) };
        LeashStatus::Ok
    })
}

/// Parse a configuration from its JSON document (same schema as the CLI
/// accepts). Unknown keys are rejected.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn leash_train_config_from_json(
    json: *const c_char,
    out: *mut *mut LeashTrainConfig,
) -> LeashStatus {
    guarded(|| {
        if out.is_null() {
            return fail(LeashStatus::NullArg, "out pointer is NULL");
        }
        let json = match unsafe { utf8_arg(json) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let cfg: TrainConfig = match serde_json_from(json) {
            Ok(cfg) => cfg,
            Err(message) => return fail(LeashStatus::Parse, message),
        };
        if let Err(e) = cfg.validate() {
            return fail(status_for(&e), e);
        }
        unsafe { *out = Box::into_raw(Box::new(LeashTrainConfig(cfg))) };
        LeashStatus::Ok
    })
}

fn serde_json_from(json: &str) -> Result<TrainConfig, String> {
    leash_core::trainer::train_config_from_json(json).map_err(|e| e.to_string())
}

/// Serialize a configuration to JSON. Free with [`leash_string_free`].
///
/// # Safety
/// `cfg` must be a live handle; `out` must be a valid string slot.
#[no_mangle]
pub unsafe extern "C" fn leash_train_config_to_json(
    cfg: *const LeashTrainConfig,
    out: *mut *mut c_char,
) -> LeashStatus {
    guarded(|| {
        if cfg.is_null() || out.is_null() {
            return fail(LeashStatus::NullArg, "handle or out pointer is NULL");
        }
        match leash_core::trainer::train_config_to_json(&unsafe { &*cfg }.0) {
            Ok(json) => string_out(json, out),
            Err(e) => fail(LeashStatus::Runtime, e),
        }
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn leash_train_config_set_seed(
    cfg: *mut LeashTrainConfig,
    seed: u64,
) -> LeashStatus {
    guarded(|| {
        if cfg.is_null() {
            return fail(LeashStatus::NullArg, "config handle is NULL");
        }
        unsafe { &mut *cfg }.0.global_seed = seed;
        LeashStatus::Ok
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn leash_train_config_set_iterations(
    cfg: *mut LeashTrainConfig,
    iterations: u64,
) -> LeashStatus {
    guarded(|| {
        if cfg.is_null() {
            return fail(LeashStatus::NullArg, "config handle is NULL");
        }
        unsafe { &mut *cfg }.0.iterations = iterations as usize;
        LeashStatus::Ok
    })
}

/// Select the dual controller: "adaptive" or "constant".
///
/// # Safety
/// `cfg` must be a live handle; `controller` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn leash_train_config_set_controller(
    cfg: *mut LeashTrainConfig,
    controller: *const c_char,
) -> LeashStatus {
    guarded(|| {
        if cfg.is_null() {
            return fail(LeashStatus::NullArg, "config handle is NULL");
        }
        let name = match unsafe { utf8_arg(controller) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let kind = match name {
            "adaptive" => ControllerKind::Adaptive,
            "constant" => ControllerKind::Constant,
            other => {
                return fail(LeashStatus::InvalidConfig, format!("unknown controller '{other}'"))
            }
        };
        unsafe { &mut *cfg }.0.controller = kind;
        LeashStatus::Ok
    })
}

/// Select the penalty form: "one_sided", "two_sided", or "two_sided_clipped".
///
/// # Safety
/// `cfg` must be a live handle; `penalty` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn leash_train_config_set_penalty(
    cfg: *mut LeashTrainConfig,
    penalty: *const c_char,
) -> LeashStatus {
    guarded(|| {
        if cfg.is_null() {
            return fail(LeashStatus::NullArg, "config handle is NULL");
        }
        let name = match unsafe { utf8_arg(penalty) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let kind = match name {
            "one_sided" => PenaltyKind::OneSided,
            "two_sided" => PenaltyKind::TwoSided,
            "two_sided_clipped" => PenaltyKind::TwoSidedClipped,
            other => {
                return fail(LeashStatus::InvalidConfig, format!("unknown penalty '{other}'"))
            }
        };
        unsafe { &mut *cfg }.0.penalty = kind;
        LeashStatus::Ok
    })
}

/// # Safety
/// `cfg` must be NULL or a live handle, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn leash_train_config_free(cfg: *mut LeashTrainConfig) {
    if !cfg.is_null() {
        drop(unsafe { Box::from_raw(cfg) });
    }
}

/// Run training. `metrics_csv_path` may be NULL to skip CSV streaming.
///
/// # Safety
/// `cfg` and `tasks` must be live handles; `metrics_csv_path` must be NULL or
/// NUL-terminated; `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn leash_train(
    cfg: *const LeashTrainConfig,
    tasks: *const LeashTaskSet,
    metrics_csv_path: *const c_char,
    out: *mut *mut LeashTrainHistory,
) -> LeashStatus {
    guarded(|| {
        if cfg.is_null() || tasks.is_null() || out.is_null() {
            return fail(LeashStatus::NullArg, "handle or out pointer is NULL");
        }
        let path_owned;
        let path: Option<&Path> = if metrics_csv_path.is_null() {
            None
        } else {
            match unsafe { utf8_arg(metrics_csv_path) } {
                Ok(s) => {
                    path_owned = s.to_string();
                    Some(Path::new(&path_owned))
                }
                Err(status) => return status,
            }
        };
        match train(&unsafe { &*cfg }.0, &unsafe { &*tasks }.0, path) {
            Ok(history) => {
                unsafe { *out = Box::into_raw(Box::new(LeashTrainHistory(history))) };
                LeashStatus::Ok
            }
            Err(e) => fail(status_for(&e), e),
        }
    })
}

/// Number of completed iterations; 0 for NULL.
///
/// # Safety
/// `history` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn leash_history_len(history: *const LeashTrainHistory) -> usize {
    if history.is_null() {
        return 0;
    }
    unsafe { &*history }.0.metrics.len()
}

/// Read one metric of one iteration into `out`.
///
/// # Safety
/// `history` must be a live handle; `out` must be a valid double slot.
#[no_mangle]
pub unsafe extern "C" fn leash_history_metric(
    history: *const LeashTrainHistory,
    iteration: usize,
    metric: c_int,
    out: *mut c_double,
) -> LeashStatus {
    guarded(|| {
        if history.is_null() || out.is_null() {
            return fail(LeashStatus::NullArg, "handle or out pointer is NULL");
        }
        let metrics = &unsafe { &*history }.0.metrics;
        let Some(m) = metrics.get(iteration) else {
            return fail(
                LeashStatus::OutOfRange,
                format!("iteration {iteration} out of range ({} recorded)", metrics.len()),
            );
        };
        let value = match metric {
            x if x == LeashMetric::SatisfactionRate as c_int => m.satisfaction_rate,
            x if x == LeashMetric::Lambda as c_int => m.lambda,
            x if x == LeashMetric::EffectivePenalty as c_int => m.effective_penalty,
            x if x == LeashMetric::MeanLength as c_int => m.mean_length,
            x if x == LeashMetric::MeanAccuracy as c_int => m.mean_accuracy,
            x if x == LeashMetric::MeanShapedReward as c_int => m.mean_shaped_reward,
            x if x == LeashMetric::ViolationEstimate as c_int => m.violation_estimate,
            other => {
                return fail(LeashStatus::OutOfRange, format!("unknown metric id {other}"))
            }
        };
        unsafe { *out = value };
        LeashStatus::Ok
    })
}

/// Final penalty coefficient; NaN for NULL.
///
/// # Safety
/// `history` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn leash_history_final_lambda(
    history: *const LeashTrainHistory,
) -> c_double {
    if history.is_null() {
        return f64::NAN;
    }
    unsafe { &*history }.0.final_dual.lambda
}

/// Serialize the final policy checkpoint to JSON. Free with
/// [`leash_string_free`].
///
/// # Safety
/// `history` must be a live handle; `out` must be a valid string slot.
#[no_mangle]
pub unsafe extern "C" fn leash_history_policy_json(
    history: *const LeashTrainHistory,
    out: *mut *mut c_char,
) -> LeashStatus {
    guarded(|| {
        if history.is_null() || out.is_null() {
            return fail(LeashStatus::NullArg, "handle or out pointer is NULL");
        }
        string_out(unsafe { &*history }.0.final_policy.to_json(), out)
    })
}

/// # Safety
/// `history` must be NULL or a live handle, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn leash_history_free(history: *mut LeashTrainHistory) {
    if !history.is_null() {
        drop(unsafe { Box::from_raw(history) });
    }
}

/// Count keyword occurrences in `text` with the built-in groups, writing the
/// per-group totals.
///
/// # Safety
/// `text` must be NUL-terminated; the three out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn leash_count_keywords(
    text: *const c_char,
    out_summary: *mut u64,
    out_rethink: *mut u64,
    out_plan: *mut u64,
) -> LeashStatus {
    guarded(|| {
        if out_summary.is_null() || out_rethink.is_null() || out_plan.is_null() {
            return fail(LeashStatus::NullArg, "out pointer is NULL");
        }
        let text = match unsafe { utf8_arg(text) } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let counts = count_keywords(text, &KeywordGroups::default());
        unsafe {
            *out_summary = counts.summary;
            *out_rethink = counts.rethink;
            *out_plan = counts.plan;
        }
        LeashStatus::Ok
    })
}
