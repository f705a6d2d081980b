//! Exercise the C ABI through its exported functions, the way a foreign
//! binding would: opaque handles, status codes, and string ownership.

use std::ffi::{CStr, CString};
use std::ptr;

use leash_ffi::*;

fn cstring(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take_string(ptr: *mut std::ffi::c_char) -> String {
    assert!(!ptr.is_null());
    let s = unsafe { CStr::from_ptr(ptr) }.to_string_lossy().into_owned();
    unsafe { leash_string_free(ptr) };
    s
}

fn last_error() -> String {
    unsafe {
        let ptr = leash_last_error_message();
        if ptr.is_null() {
            String::new()
        } else {
            take_string(ptr)
        }
    }
}

#[test]
fn version_is_a_static_string() {
    let version = unsafe { CStr::from_ptr(leash_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn task_set_round_trip_and_null_handling() {
    unsafe {
        let mut set: *mut LeashTaskSet = ptr::null_mut();
        assert_eq!(leash_task_set_default(&mut set), LeashStatus::Ok);
        assert_eq!(leash_task_set_len(set), 32);

        let mut json: *mut std::ffi::c_char = ptr::null_mut();
        assert_eq!(leash_task_set_to_json(set, &mut json), LeashStatus::Ok);
        let text = take_string(json);
        assert!(text.contains("\"schema_version\": 1"));

        let mut copy: *mut LeashTaskSet = ptr::null_mut();
        let c = cstring(&text);
        assert_eq!(leash_task_set_from_json(c.as_ptr(), &mut copy), LeashStatus::Ok);
        assert_eq!(leash_task_set_len(copy), 32);
        leash_task_set_free(copy);
        leash_task_set_free(set);

        // NULL and malformed inputs return codes instead of crashing.
        assert_eq!(leash_task_set_default(ptr::null_mut()), LeashStatus::NullArg);
        assert_eq!(leash_task_set_len(ptr::null()), 0);
        let bad = cstring("{\"nope\": 1}");
        let mut out: *mut LeashTaskSet = ptr::null_mut();
        assert_eq!(leash_task_set_from_json(bad.as_ptr(), &mut out), LeashStatus::Parse);
        assert!(!last_error().is_empty());
    }
}

#[test]
fn config_json_round_trip_rejects_unknown_keys() {
    unsafe {
        let mut cfg: *mut LeashTrainConfig = ptr::null_mut();
        assert_eq!(leash_train_config_new(48, 5, 7, &mut cfg), LeashStatus::Ok);
        let mut json: *mut std::ffi::c_char = ptr::null_mut();
        assert_eq!(leash_train_config_to_json(cfg, &mut json), LeashStatus::Ok);
        let text = take_string(json);
        assert!(text.contains("\"target_length\": 48"));
        leash_train_config_free(cfg);

        let mut parsed: *mut LeashTrainConfig = ptr::null_mut();
        let c = cstring(&text);
        assert_eq!(leash_train_config_from_json(c.as_ptr(), &mut parsed), LeashStatus::Ok);
        leash_train_config_free(parsed);

        let bad = cstring("{\"target_length\": 8, \"iterations\": 1, \"global_seed\": 0, \"zz\": 1}");
        let mut out: *mut LeashTrainConfig = ptr::null_mut();
        assert_eq!(leash_train_config_from_json(bad.as_ptr(), &mut out), LeashStatus::Parse);

        let invalid = cstring("{\"target_length\": 0, \"iterations\": 1, \"global_seed\": 0}");
        assert_eq!(
            leash_train_config_from_json(invalid.as_ptr(), &mut out),
            LeashStatus::InvalidConfig
        );
    }
}

#[test]
fn train_through_the_abi_and_read_metrics() {
    unsafe {
        let tasks_json = cstring(
            r#"{
                "schema_version": 1,
                "tasks": [
                    {"id": 0, "required_length": 4, "max_length": 24, "base_success": 0.1},
                    {"id": 1, "required_length": 8, "max_length": 24, "base_success": 0.1}
                ]
            }"#,
        );
        let mut tasks: *mut LeashTaskSet = ptr::null_mut();
        assert_eq!(leash_task_set_from_json(tasks_json.as_ptr(), &mut tasks), LeashStatus::Ok);

        let cfg_json = cstring(
            r#"{"batch_size": 8, "group_size": 4, "target_length": 8,
                "iterations": 6, "global_seed": 3}"#,
        );
        let mut cfg: *mut LeashTrainConfig = ptr::null_mut();
        assert_eq!(leash_train_config_from_json(cfg_json.as_ptr(), &mut cfg), LeashStatus::Ok);
        let controller = cstring("constant");
        assert_eq!(
            leash_train_config_set_controller(cfg, controller.as_ptr()),
            LeashStatus::Ok
        );

        let mut history: *mut LeashTrainHistory = ptr::null_mut();
        assert_eq!(leash_train(cfg, tasks, ptr::null(), &mut history), LeashStatus::Ok);
        assert_eq!(leash_history_len(history), 6);

        let mut value = f64::NAN;
        assert_eq!(
            leash_history_metric(history, 0, LeashMetric::Lambda as i32, &mut value),
            LeashStatus::Ok
        );
        assert_eq!(value, 0.1);
        assert_eq!(
            leash_history_metric(history, 0, LeashMetric::SatisfactionRate as i32, &mut value),
            LeashStatus::Ok
        );
        assert!((0.0..=1.0).contains(&value));
        assert_eq!(
            leash_history_metric(history, 99, LeashMetric::Lambda as i32, &mut value),
            LeashStatus::OutOfRange
        );
        // Constant controller: the coefficient never moved.
        assert_eq!(leash_history_final_lambda(history), 0.1);

        let mut policy_json: *mut std::ffi::c_char = ptr::null_mut();
        assert_eq!(leash_history_policy_json(history, &mut policy_json), LeashStatus::Ok);
        let text = take_string(policy_json);
        let parsed = leash_core::policy::PolicyParams::from_json(&text).unwrap();
        assert_eq!(parsed.version(), 6);

        leash_history_free(history);
        leash_train_config_free(cfg);
        leash_task_set_free(tasks);
    }
}

#[test]
fn training_runs_are_reproducible_across_the_abi() {
    unsafe {
        let run = || {
            let mut tasks: *mut LeashTaskSet = ptr::null_mut();
            assert_eq!(leash_task_set_default(&mut tasks), LeashStatus::Ok);
            let mut cfg: *mut LeashTrainConfig = ptr::null_mut();
            assert_eq!(leash_train_config_new(48, 4, 11, &mut cfg), LeashStatus::Ok);
            let mut history: *mut LeashTrainHistory = ptr::null_mut();
            assert_eq!(leash_train(cfg, tasks, ptr::null(), &mut history), LeashStatus::Ok);
            let mut values = Vec::new();
            for i in 0..leash_history_len(history) {
                for metric in 0..=6 {
                    let mut v = 0.0;
                    assert_eq!(
                        leash_history_metric(history, i, metric, &mut v),
                        LeashStatus::Ok
                    );
                    values.push(v.to_bits());
                }
            }
            leash_history_free(history);
            leash_train_config_free(cfg);
            leash_task_set_free(tasks);
            values
        };
        assert_eq!(run(), run());
    }
}

#[test]
fn keyword_counts_match_the_library() {
    unsafe {
        let text = cstring("So we wait; first check again, then conclude. Overall: rethink step two.");
        let (mut s, mut r, mut p) = (0u64, 0u64, 0u64);
        assert_eq!(leash_count_keywords(text.as_ptr(), &mut s, &mut r, &mut p), LeashStatus::Ok);
        let expected = leash_core::analysis::count_keywords(
            text.to_str().unwrap(),
            &leash_core::analysis::KeywordGroups::default(),
        );
        assert_eq!((s, r, p), (expected.summary, expected.rethink, expected.plan));

        assert_eq!(
            leash_count_keywords(ptr::null(), &mut s, &mut r, &mut p),
            LeashStatus::NullArg
        );
    }
}
