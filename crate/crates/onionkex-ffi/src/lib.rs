//! C ABI over the session runner and the linkage experiments.
//!
//! Conventions:
//!
//! - Sessions are opaque handles created by [`onionkex_session_run`] and
//!   released with [`onionkex_session_free`].
//! - Every returned `char *` is a NUL-terminated UTF-8 string owned by the
//!   caller; release it with [`onionkex_string_free`].
//! - Functions that can fail report an [`OnionkexStatus`]; on failure a
//!   thread-local message is retrievable via [`onionkex_last_error_message`].
//! - All pointers may be NULL unless stated otherwise; NULL inputs yield
//!   `ONIONKEX_STATUS_NULL_ARGUMENT` rather than undefined behavior.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

use onionkex::adversary::{
    multi_circuit_bound, pinned_service_analytic, run_sweep, sweep_to_csv, SweepConfig,
};
use onionkex::runner::{run_session, SessionRun, SessionSetup};

/// Result of a fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnionkexStatus {
    /// The call succeeded.
    OnionkexStatusOk = 0,
    /// A required pointer argument was NULL.
    OnionkexStatusNullArgument = 1,
    /// A string argument was not valid UTF-8.
    OnionkexStatusInvalidUtf8 = 2,
    /// A configuration document failed to parse or validate.
    OnionkexStatusInvalidConfig = 3,
    /// The run itself failed.
    OnionkexStatusRunFailed = 4,
    /// A scalar argument was out of range.
    OnionkexStatusInvalidArgument = 5,
}

use OnionkexStatus::*;

/// An established session: the full run, kept opaque to C callers.
pub struct OnionkexSession {
    run: SessionRun,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', "?"))
        .unwrap_or_else(|_| CString::new("error message unavailable").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn write_status(out: *mut OnionkexStatus, status: OnionkexStatus) {
    if !out.is_null() {
        unsafe { *out = status };
    }
}

/// Converts a Rust string into a caller-owned C string.
fn into_c_string(text: String) -> *mut c_char {
    CString::new(text.replace('\0', "?"))
        .map(CString::into_raw)
        .unwrap_or(ptr::null_mut())
}

unsafe fn utf8_arg<'a>(
    pointer: *const c_char,
    what: &str,
) -> Result<&'a str, OnionkexStatus> {
    if pointer.is_null() {
        set_last_error(format!("{what} is NULL"));
        return Err(OnionkexStatusNullArgument);
    }
    CStr::from_ptr(pointer).to_str().map_err(|_| {
        set_last_error(format!("{what} is not valid UTF-8"));
        OnionkexStatusInvalidUtf8
    })
}

/// ABI revision of this header; bumped on any breaking change.
#[no_mangle]
pub extern "C" fn onionkex_abi_version() -> u32 {
    1
}

/// Returns the most recent error message on this thread, or NULL when the
/// last call succeeded. The caller owns the string.
#[no_mangle]
pub extern "C" fn onionkex_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|message| message.clone().into_raw())
            .unwrap_or(ptr::null_mut())
    })
}

/// Releases a string returned by this library. NULL is ignored.
#[no_mangle]
pub extern "C" fn onionkex_string_free(string: *mut c_char) {
    if !string.is_null() {
        drop(unsafe { CString::from_raw(string) });
    }
}

/// Runs one key-establishment session described by `setup_json` (the same
/// document the CLI accepts). Returns NULL on failure with `status` and the
/// last-error message set.
///
/// # Safety
///
/// `setup_json` must be NULL or a valid NUL-terminated string; `status` must
/// be NULL or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn onionkex_session_run(
    setup_json: *const c_char,
    status: *mut OnionkexStatus,
) -> *mut OnionkexSession {
    clear_last_error();
    let setup_json = match utf8_arg(setup_json, "setup_json") {
        Ok(text) => text,
        Err(code) => {
            write_status(status, code);
            return ptr::null_mut();
        }
    };
    let setup: SessionSetup = match serde_json::from_str(setup_json) {
        Ok(setup) => setup,
        Err(error) => {
            set_last_error(format!("invalid session setup: {error}"));
            write_status(status, OnionkexStatusInvalidConfig);
            return ptr::null_mut();
        }
    };
    match run_session(&setup) {
        Ok(run) => {
            write_status(status, OnionkexStatusOk);
            Box::into_raw(Box::new(OnionkexSession { run }))
        }
        Err(error) => {
            set_last_error(error.to_string());
            write_status(status, OnionkexStatusRunFailed);
            ptr::null_mut()
        }
    }
}

/// Releases a session handle. NULL is ignored.
#[no_mangle]
pub extern "C" fn onionkex_session_free(session: *mut OnionkexSession) {
    if !session.is_null() {
        drop(unsafe { Box::from_raw(session) });
    }
}

/// Whether both endpoints reconstructed the same key and the encrypted
/// probe round-tripped. Returns false for NULL.
#[no_mangle]
pub extern "C" fn onionkex_session_keys_match(session: *const OnionkexSession) -> bool {
    let Some(session) = (unsafe { session.as_ref() }) else {
        return false;
    };
    session.run.report.keys_match && session.run.report.probe_round_trip
}

/// The session report as pretty-printed JSON. Returns NULL for NULL input.
#[no_mangle]
pub extern "C" fn onionkex_session_report_json(
    session: *const OnionkexSession,
) -> *mut c_char {
    let Some(session) = (unsafe { session.as_ref() }) else {
        return ptr::null_mut();
    };
    into_c_string(session.run.report.canonical_json())
}

/// The adversary observation log as JSON lines. Returns NULL for NULL input
/// or if encoding fails.
#[no_mangle]
pub extern "C" fn onionkex_session_observations_jsonl(
    session: *const OnionkexSession,
) -> *mut c_char {
    let Some(session) = (unsafe { session.as_ref() }) else {
        return ptr::null_mut();
    };
    let mut jsonl = String::new();
    for record in &session.run.observations {
        match serde_json::to_string(record) {
            Ok(line) => {
                jsonl.push_str(&line);
                jsonl.push('\n');
            }
            Err(_) => return ptr::null_mut(),
        }
    }
    into_c_string(jsonl)
}

/// Runs a linkage sweep described by `sweep_json` (the same document the
/// CLI accepts) and returns the result as CSV. Returns NULL on failure.
///
/// # Safety
///
/// `sweep_json` must be NULL or a valid NUL-terminated string; `status`
/// must be NULL or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn onionkex_experiment_csv(
    sweep_json: *const c_char,
    status: *mut OnionkexStatus,
) -> *mut c_char {
    clear_last_error();
    let sweep_json = match utf8_arg(sweep_json, "sweep_json") {
        Ok(text) => text,
        Err(code) => {
            write_status(status, code);
            return ptr::null_mut();
        }
    };
    let config: SweepConfig = match serde_json::from_str(sweep_json) {
        Ok(config) => config,
        Err(error) => {
            set_last_error(format!("invalid sweep config: {error}"));
            write_status(status, OnionkexStatusInvalidConfig);
            return ptr::null_mut();
        }
    };
    match run_sweep(&config) {
        Ok(rows) => {
            write_status(status, OnionkexStatusOk);
            into_c_string(sweep_to_csv(&rows))
        }
        Err(error) => {
            set_last_error(error.to_string());
            write_status(status, OnionkexStatusRunFailed);
            ptr::null_mut()
        }
    }
}

/// Analytic all-circuit linkage probability with fresh guards:
/// `fraction^(2 * circuits)`. Writes to `out`; fails on out-of-range input.
///
/// # Safety
///
/// `out` must be NULL or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn onionkex_multi_circuit_bound(
    fraction: f64,
    circuits: u32,
    out: *mut f64,
) -> OnionkexStatus {
    clear_last_error();
    if out.is_null() {
        set_last_error("out is NULL".into());
        return OnionkexStatusNullArgument;
    }
    match multi_circuit_bound(fraction, circuits as usize) {
        Ok(value) => {
            *out = value;
            OnionkexStatusOk
        }
        Err(error) => {
            set_last_error(error.to_string());
            OnionkexStatusInvalidArgument
        }
    }
}

/// Analytic all-circuit linkage probability when only the responding
/// endpoint pins its guard: `fraction^(circuits + 1)`.
///
/// # Safety
///
/// `out` must be NULL or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn onionkex_pinned_service_bound(
    fraction: f64,
    circuits: u32,
    out: *mut f64,
) -> OnionkexStatus {
    clear_last_error();
    if out.is_null() {
        set_last_error("out is NULL".into());
        return OnionkexStatusNullArgument;
    }
    match pinned_service_analytic(fraction, circuits as usize) {
        Ok(value) => {
            *out = value;
            OnionkexStatusOk
        }
        Err(error) => {
            set_last_error(error.to_string());
            OnionkexStatusInvalidArgument
        }
    }
}
