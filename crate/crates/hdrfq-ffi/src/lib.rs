//! C ABI over the hdrfq library: opaque scenario handles, integer error
//! codes, UTF-8 JSON in and out. The generated header lands in
//! `include/hdrfq.h` at build time.
//!
//! Conventions: functions returning a pointer return NULL on failure;
//! functions returning `int` return an `HdrfqStatus`. The most recent error
//! message for the calling thread is available via `hdrfq_last_error`.
//! Strings returned by `hdrfq_*_json` functions are owned by the caller and
//! must be released with `hdrfq_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hdrfq::analysis::dovetail_delay_bound;
use hdrfq::report::{scenario_bound_profiles, write_run_outputs, OutputFormat};
use hdrfq::scheduler::flatten_weights;
use hdrfq::sim::{run, Scenario};

/// Status codes returned by fallible functions.
#[repr(C)]
pub enum HdrfqStatus {
    Ok = 0,
    /// Malformed input: bad JSON, bad hierarchy, bad parameters.
    InvalidArgument = 1,
    /// The operation itself failed (simulation or I/O error).
    Runtime = 2,
}

/// Opaque handle over a parsed, validated scenario.
pub struct HdrfqScenario {
    scenario: Scenario,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let cleaned: String = msg.chars().filter(|c| *c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(cleaned).unwrap_or_default();
    });
}

fn utf8_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, ()> {
    if ptr.is_null() {
        set_error(&format!("{what} is NULL"));
        return Err(());
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
    })
}

fn leak_string(s: String) -> *mut c_char {
    match CString::new(s) {
        Ok(c) => c.into_raw(),
        Err(_) => {
            set_error("output contained an interior NUL byte");
            ptr::null_mut()
        }
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn hdrfq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last error raised on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hdrfq_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Parse and validate a scenario JSON document. Returns NULL on failure.
#[no_mangle]
pub extern "C" fn hdrfq_scenario_parse(json: *const c_char) -> *mut HdrfqScenario {
    let result = catch_unwind(AssertUnwindSafe(|| {
        let json = utf8_arg(json, "scenario json").ok()?;
        let scenario = match Scenario::from_json(json) {
            Ok(s) => s,
            Err(e) => {
                set_error(&e.to_string());
                return None;
            }
        };
        if let Err(e) = scenario.validated_spec() {
            set_error(&e.to_string());
            return None;
        }
        Some(Box::into_raw(Box::new(HdrfqScenario { scenario })))
    }));
    match result {
        Ok(Some(p)) => p,
        Ok(None) => ptr::null_mut(),
        Err(_) => {
            set_error("internal panic");
            ptr::null_mut()
        }
    }
}

/// Release a scenario handle. NULL is accepted.
#[no_mangle]
pub extern "C" fn hdrfq_scenario_free(handle: *mut HdrfqScenario) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Run the scenario and write trace.csv, shares.csv, delay_stats.csv,
/// bounds.json and manifest.json under `out_dir`.
#[no_mangle]
pub extern "C" fn hdrfq_run_to_dir(
    handle: *const HdrfqScenario,
    out_dir: *const c_char,
) -> c_int {
    let result = catch_unwind(AssertUnwindSafe(|| {
        if handle.is_null() {
            set_error("scenario handle is NULL");
            return HdrfqStatus::InvalidArgument as c_int;
        }
        let Ok(dir) = utf8_arg(out_dir, "output directory") else {
            return HdrfqStatus::InvalidArgument as c_int;
        };
        let scenario = &unsafe { &*handle }.scenario;
        let spec = match scenario.validated_spec() {
            Ok(s) => s,
            Err(e) => {
                set_error(&e.to_string());
                return HdrfqStatus::InvalidArgument as c_int;
            }
        };
        match run(scenario).and_then(|out| {
            write_run_outputs(
                std::path::Path::new(dir),
                None,
                scenario,
                &spec,
                &out,
                OutputFormat::Csv,
            )
        }) {
            Ok(_) => HdrfqStatus::Ok as c_int,
            Err(e) => {
                set_error(&e.to_string());
                HdrfqStatus::Runtime as c_int
            }
        }
    }));
    result.unwrap_or_else(|_| {
        set_error("internal panic");
        HdrfqStatus::Runtime as c_int
    })
}

/// Per-leaf start-of-service delay bounds of the scenario's hierarchy as a
/// JSON array. Caller frees the string with `hdrfq_string_free`. NULL on
/// failure (for example when a flow has zero demand on some resource).
#[no_mangle]
pub extern "C" fn hdrfq_delay_bounds_json(handle: *const HdrfqScenario) -> *mut c_char {
    let result = catch_unwind(AssertUnwindSafe(|| {
        if handle.is_null() {
            set_error("scenario handle is NULL");
            return ptr::null_mut();
        }
        let scenario = &unsafe { &*handle }.scenario;
        let spec = match scenario.validated_spec() {
            Ok(s) => s,
            Err(e) => {
                set_error(&e.to_string());
                return ptr::null_mut();
            }
        };
        let Some(profiles) = scenario_bound_profiles(scenario, &spec) else {
            set_error("every leaf needs a flow to define bound profiles");
            return ptr::null_mut();
        };
        let mut reports = Vec::new();
        for leaf in spec.leaves() {
            match dovetail_delay_bound(&spec, &profiles, leaf) {
                Ok(r) => reports.push(r),
                Err(e) => {
                    set_error(&e.to_string());
                    return ptr::null_mut();
                }
            }
        }
        leak_string(serde_json::to_string_pretty(&reports).expect("reports serialize"))
    }));
    result.unwrap_or_else(|_| {
        set_error("internal panic");
        ptr::null_mut()
    })
}

/// Flattened (collapsed-tree) weights of the scenario's leaves as a JSON
/// object `{leaf id: weight}`, computed with every leaf treated as
/// backlogged. Caller frees with `hdrfq_string_free`.
#[no_mangle]
pub extern "C" fn hdrfq_flattened_weights_json(handle: *const HdrfqScenario) -> *mut c_char {
    let result = catch_unwind(AssertUnwindSafe(|| {
        if handle.is_null() {
            set_error("scenario handle is NULL");
            return ptr::null_mut();
        }
        let scenario = &unsafe { &*handle }.scenario;
        let spec = match scenario.validated_spec() {
            Ok(s) => s,
            Err(e) => {
                set_error(&e.to_string());
                return ptr::null_mut();
            }
        };
        let Some(profiles) = scenario_bound_profiles(scenario, &spec) else {
            set_error("every leaf needs a flow to define profiles");
            return ptr::null_mut();
        };
        let active = profiles.keys().copied().collect();
        match flatten_weights(&spec, &profiles, &active) {
            Ok(weights) => {
                let named: std::collections::BTreeMap<String, f64> = weights
                    .into_iter()
                    .map(|(n, w)| (spec.id(n).to_string(), w))
                    .collect();
                leak_string(serde_json::to_string_pretty(&named).expect("weights serialize"))
            }
            Err(e) => {
                set_error(&e.to_string());
                ptr::null_mut()
            }
        }
    }));
    result.unwrap_or_else(|_| {
        set_error("internal panic");
        ptr::null_mut()
    })
}

/// Release a string returned by this library. NULL is accepted.
#[no_mangle]
pub extern "C" fn hdrfq_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario_json() -> CString {
        let scenario = hdrfq::presets::simple_saturated_scenario(
            hdrfq::scheduler::SchedulerKind::DovetailingHdrfq,
            0.0005,
            1,
        );
        CString::new(scenario.to_json()).unwrap()
    }

    #[test]
    fn version_is_a_c_string() {
        let v = unsafe { CStr::from_ptr(hdrfq_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn parse_run_and_free_through_the_abi() {
        let json = scenario_json();
        let handle = hdrfq_scenario_parse(json.as_ptr());
        assert!(!handle.is_null());

        let dir = std::env::temp_dir().join(format!("hdrfq-ffi-{}", std::process::id()));
        let dir_c = CString::new(dir.to_str().unwrap()).unwrap();
        let status = hdrfq_run_to_dir(handle, dir_c.as_ptr());
        assert_eq!(status, HdrfqStatus::Ok as c_int);
        assert!(dir.join("trace.csv").exists());
        assert!(dir.join("manifest.json").exists());

        let bounds = hdrfq_delay_bounds_json(handle);
        assert!(!bounds.is_null());
        let text = unsafe { CStr::from_ptr(bounds) }.to_str().unwrap();
        assert!(text.contains("dovetail_bound_us"));
        hdrfq_string_free(bounds);

        let weights = hdrfq_flattened_weights_json(handle);
        assert!(!weights.is_null());
        let text = unsafe { CStr::from_ptr(weights) }.to_str().unwrap();
        let parsed: std::collections::BTreeMap<String, f64> =
            serde_json::from_str(text).unwrap();
        assert!((parsed["f2.1"] - 1.0 / 3.0).abs() < 1e-9);
        hdrfq_string_free(weights);

        hdrfq_scenario_free(handle);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bad_input_sets_error_and_returns_null() {
        let bad = CString::new("{not json").unwrap();
        let handle = hdrfq_scenario_parse(bad.as_ptr());
        assert!(handle.is_null());
        let msg = unsafe { CStr::from_ptr(hdrfq_last_error()) };
        assert!(!msg.to_bytes().is_empty());

        assert!(hdrfq_scenario_parse(ptr::null()).is_null());
        assert_eq!(
            hdrfq_run_to_dir(ptr::null(), ptr::null()),
            HdrfqStatus::InvalidArgument as c_int
        );
        // freeing NULL is a no-op
        hdrfq_scenario_free(ptr::null_mut());
        hdrfq_string_free(ptr::null_mut());
    }
}
