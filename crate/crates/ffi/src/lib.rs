//! C ABI over the checker, machine and profiler.
//!
//! Programs are parsed into opaque handles; every entry point returns a
//! status code and writes results through out-parameters. Strings returned
//! through out-parameters are owned by the caller and must be released with
//! [`wl_string_free`].

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use weaklin::corpus::Variant;
use weaklin::machine::{MachineOptions, RunOutcome};
use weaklin::profile;
use weaklin::surface::{parse_program, ProgramFile};
use weaklin::typing::CheckOptions;
use weaklin::verify::{self, ConfigVerdict};

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum WlStatus {
    Ok = 0,
    ParseError = 1,
    TypeError = 2,
    RuntimeError = 3,
    FuelExhausted = 4,
    Inconclusive = 5,
    InvalidArgument = 6,
}

/// An opaque parsed program template.
pub struct WlProgram {
    template: ProgramFile,
}

fn write_string(out: *mut *mut c_char, s: &str) {
    if out.is_null() {
        return;
    }
    let c = CString::new(s.replace('\0', " ")).expect("interior NULs replaced");
    unsafe { *out = c.into_raw() };
}

fn read_str<'a>(p: *const c_char) -> Option<&'a str> {
    if p.is_null() {
        return None;
    }
    unsafe { CStr::from_ptr(p) }.to_str().ok()
}

/// Parse a program from UTF-8 source text into a new handle.
///
/// # Safety
/// `src` must be a NUL-terminated string; `out_program` and `out_error`,
/// when non-null, must be writable.
#[no_mangle]
pub unsafe extern "C" fn wl_program_parse(
    src: *const c_char,
    out_program: *mut *mut WlProgram,
    out_error: *mut *mut c_char,
) -> WlStatus {
    if out_program.is_null() {
        return WlStatus::InvalidArgument;
    }
    unsafe { *out_program = ptr::null_mut() };
    let Some(text) = read_str(src) else {
        write_string(out_error, "source is null or not UTF-8");
        return WlStatus::InvalidArgument;
    };
    match parse_program(text) {
        Ok(template) => {
            let handle = Box::new(WlProgram { template });
            unsafe { *out_program = Box::into_raw(handle) };
            WlStatus::Ok
        }
        Err(e) => {
            write_string(out_error, &e.to_string());
            WlStatus::ParseError
        }
    }
}

/// Load a built-in program. `variant` is `"weak-linear"` or
/// `"unrestricted"`.
///
/// # Safety
/// `name` and `variant` must be NUL-terminated strings; `out_program` and
/// `out_error`, when non-null, must be writable.
#[no_mangle]
pub unsafe extern "C" fn wl_program_builtin(
    name: *const c_char,
    variant: *const c_char,
    out_program: *mut *mut WlProgram,
    out_error: *mut *mut c_char,
) -> WlStatus {
    if out_program.is_null() {
        return WlStatus::InvalidArgument;
    }
    unsafe { *out_program = ptr::null_mut() };
    let (Some(name), Some(variant)) = (read_str(name), read_str(variant)) else {
        write_string(out_error, "name or variant is null or not UTF-8");
        return WlStatus::InvalidArgument;
    };
    let variant: Variant = match variant.parse() {
        Ok(v) => v,
        Err(e) => {
            write_string(out_error, &e);
            return WlStatus::InvalidArgument;
        }
    };
    match weaklin::corpus::get_program(name, variant, 8) {
        Ok(template) => {
            unsafe { *out_program = Box::into_raw(Box::new(WlProgram { template })) };
            WlStatus::Ok
        }
        Err(e) => {
            write_string(out_error, &e.to_string());
            WlStatus::InvalidArgument
        }
    }
}

/// Release a program handle.
///
/// # Safety
/// `program` must have come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn wl_program_free(program: *mut WlProgram) {
    if !program.is_null() {
        drop(unsafe { Box::from_raw(program) });
    }
}

fn instantiate_at(
    program: &WlProgram,
    n: i64,
    out_error: *mut *mut c_char,
) -> Result<weaklin::surface::Instance, WlStatus> {
    let template = if n >= 0 {
        program.template.clone().with_param("n", n)
    } else {
        program.template.clone()
    };
    template.instantiate().map_err(|e| {
        write_string(out_error, &e.to_string());
        WlStatus::InvalidArgument
    })
}

/// Type-check the configuration at parameter `n` (pass a negative `n` to
/// keep the file's default). On success writes the reconstructed context;
/// on a type error writes the diagnostic.
///
/// # Safety
/// `program` must be a live handle; the out-parameters, when non-null,
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn wl_program_check(
    program: *const WlProgram,
    n: i64,
    out_report: *mut *mut c_char,
) -> WlStatus {
    let Some(program) = (unsafe { program.as_ref() }) else {
        return WlStatus::InvalidArgument;
    };
    let mut instance = match instantiate_at(program, n, out_report) {
        Ok(i) => i,
        Err(status) => return status,
    };
    match verify::check_instance(&mut instance, CheckOptions::default()) {
        ConfigVerdict::WellTyped { context } => {
            write_string(out_report, &context);
            WlStatus::Ok
        }
        ConfigVerdict::IllTyped { message } => {
            write_string(out_report, &message);
            WlStatus::TypeError
        }
        ConfigVerdict::Inconclusive { choice_cells } => {
            write_string(
                out_report,
                &format!("inconclusive with {choice_cells} choice cells"),
            );
            WlStatus::Inconclusive
        }
    }
}

/// Check and evaluate at parameter `n`. On success writes a JSON object
/// with the terminal variable, its rendered value, the step count and the
/// live store size.
///
/// # Safety
/// Same contracts as [`wl_program_check`].
#[no_mangle]
pub unsafe extern "C" fn wl_program_run(
    program: *const WlProgram,
    n: i64,
    fuel: u64,
    out_result: *mut *mut c_char,
) -> WlStatus {
    let Some(program) = (unsafe { program.as_ref() }) else {
        return WlStatus::InvalidArgument;
    };
    let mut instance = match instantiate_at(program, n, out_result) {
        Ok(i) => i,
        Err(status) => return status,
    };
    let verdict = verify::check_instance(&mut instance, CheckOptions::default());
    if !verdict.is_well_typed() {
        let message = match verdict {
            ConfigVerdict::IllTyped { message } => message,
            other => format!("{other:?}"),
        };
        write_string(out_result, &message);
        return WlStatus::TypeError;
    }
    match weaklin::machine::run(
        instance.configuration,
        &instance.signature,
        MachineOptions::default(),
        fuel,
        false,
    ) {
        RunOutcome::Terminal {
            var, store, steps, ..
        } => {
            let value = store
                .lookup(&var)
                .map(|v| v.to_string())
                .unwrap_or_default();
            let json = serde_json::json!({
                "terminal": var.as_str(),
                "value": value,
                "steps": steps,
                "store_cells": store.len(),
            });
            write_string(out_result, &json.to_string());
            WlStatus::Ok
        }
        RunOutcome::Stuck { error, .. } => {
            write_string(out_result, &error.to_string());
            WlStatus::RuntimeError
        }
        RunOutcome::FuelExhausted { steps, .. } => {
            write_string(out_result, &format!("fuel exhausted after {steps} steps"));
            WlStatus::FuelExhausted
        }
    }
}

/// Growth experiment over a built-in program. `ns` points at `ns_len`
/// strictly increasing parameter values; the report is written as JSON.
///
/// # Safety
/// `name` and `variant` must be NUL-terminated strings; `ns` must point at
/// `ns_len` readable values; out-parameters as in [`wl_program_check`].
#[no_mangle]
pub unsafe extern "C" fn wl_growth_experiment(
    name: *const c_char,
    variant: *const c_char,
    ns: *const i64,
    ns_len: usize,
    fuel: u64,
    out_report: *mut *mut c_char,
) -> WlStatus {
    let (Some(name), Some(variant)) = (read_str(name), read_str(variant)) else {
        write_string(out_report, "name or variant is null or not UTF-8");
        return WlStatus::InvalidArgument;
    };
    let variant: Variant = match variant.parse() {
        Ok(v) => v,
        Err(e) => {
            write_string(out_report, &e);
            return WlStatus::InvalidArgument;
        }
    };
    if ns.is_null() || ns_len == 0 {
        write_string(out_report, "ns is null or empty");
        return WlStatus::InvalidArgument;
    }
    let ns = unsafe { std::slice::from_raw_parts(ns, ns_len) };
    match profile::growth_experiment(name, variant, ns, fuel) {
        Ok(report) => {
            write_string(
                out_report,
                &serde_json::to_string(&report).expect("report serializes"),
            );
            WlStatus::Ok
        }
        Err(e) => {
            write_string(out_report, &e.to_string());
            WlStatus::RuntimeError
        }
    }
}

/// Release a string produced by this library.
///
/// # Safety
/// `s` must have been written by this library and not freed twice.
#[no_mangle]
pub unsafe extern "C" fn wl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn wl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
