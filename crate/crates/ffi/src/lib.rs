//! C interface to netfield.
//!
//! Every function returns an [`NfStatus`]; on failure the message is available
//! from [`nf_last_error`] on the same thread. Handles are opaque and must be
//! released with their `_free` function. Strings returned through out-pointers
//! are owned by the caller and released with [`nf_string_free`].

use netfield::dynamics::{simulate_with, Ensemble, SimOptions};
use netfield::graphs::generate_weights;
use netfield::harness::{emit_config, parse_config, run_in_pool, ExperimentConfig, RunManifest};
use netfield::model::TimeGrid;
use netfield::noise::particle_inputs;
use netfield::Error;
use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Parse = 4,
    InvalidArgument = 5,
    SizeMismatch = 6,
    NonFinite = 7,
    NonConvergence = 8,
    Cfl = 9,
    Scheme = 10,
    Unsupported = 11,
    Io = 12,
    OutOfRange = 13,
    Panic = 14,
}

impl From<&Error> for NfStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => NfStatus::Config,
            Error::Parse { .. } => NfStatus::Parse,
            Error::SizeMismatch(_) => NfStatus::SizeMismatch,
            Error::InvalidArgument(_) => NfStatus::InvalidArgument,
            Error::NonFinite { .. } => NfStatus::NonFinite,
            Error::NonConvergence { .. } => NfStatus::NonConvergence,
            Error::Cfl { .. } => NfStatus::Cfl,
            Error::Scheme(_) => NfStatus::Scheme,
            Error::Unsupported(_) => NfStatus::Unsupported,
            Error::Format(_) | Error::Io(_) | Error::Csv(_) => NfStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(NfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(NfStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(NfStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            NfStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            NfStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s).to_str().map_err(|_| Failure(NfStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(h: *const T, what: &str) -> Result<&'a T, Failure> {
    h.as_ref().ok_or_else(|| null(what))
}

fn give_string(s: String, out: *mut *mut c_char) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    let c = CString::new(s).map_err(|_| Failure(NfStatus::InvalidArgument, "string contains a nul byte".into()))?;
    unsafe { *out = c.into_raw() };
    Ok(())
}

fn give<T>(value: T, out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Opaque experiment configuration.
pub struct NfConfig(ExperimentConfig);

/// Opaque result of a finished run.
pub struct NfManifest(RunManifest);

/// Opaque simulated particle ensemble.
pub struct NfEnsemble(Ensemble);

/// Message of the last failed call on this thread, or NULL. Valid until the next call.
#[no_mangle]
pub extern "C" fn nf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn nf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn nf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse configuration text into a new handle.
///
/// # Safety
/// `text` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_config_parse(text: *const c_char, out: *mut *mut NfConfig) -> NfStatus {
    guard(|| {
        let text = read_str(text, "config text")?;
        give(NfConfig(parse_config(text)?), out)
    })
}

/// Canonical text of a configuration.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_config_emit(config: *const NfConfig, out: *mut *mut c_char) -> NfStatus {
    guard(|| give_string(emit_config(&handle(config, "config")?.0), out))
}

/// Replace the output directory of a configuration.
///
/// # Safety
/// `config` must be a live handle; `dir` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nf_config_set_output(config: *mut NfConfig, dir: *const c_char) -> NfStatus {
    guard(|| {
        let dir = read_str(dir, "directory")?;
        let c = config.as_mut().ok_or_else(|| null("config"))?;
        c.0.out = PathBuf::from(dir);
        Ok(())
    })
}

/// # Safety
/// `config` must come from [`nf_config_parse`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn nf_config_free(config: *mut NfConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Run the configured experiment with `threads` workers (0 uses the default).
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_run(config: *const NfConfig, threads: usize, out: *mut *mut NfManifest) -> NfStatus {
    guard(|| {
        let config = &handle(config, "config")?.0;
        let threads = if threads == 0 { rayon_default() } else { threads };
        give(NfManifest(run_in_pool(config, threads)?), out)
    })
}

fn rayon_default() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// 1 when every cell finished and every check passed, 0 otherwise.
///
/// # Safety
/// `manifest` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nf_manifest_pass(manifest: *const NfManifest) -> c_int {
    manifest.as_ref().map_or(0, |m| m.0.pass() as c_int)
}

/// Number of acceptance checks in a manifest.
///
/// # Safety
/// `manifest` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn nf_manifest_check_count(manifest: *const NfManifest) -> usize {
    manifest.as_ref().map_or(0, |m| m.0.checks.len())
}

/// Name and verdict of check `index`.
///
/// # Safety
/// `manifest` must be a live handle; `name` and `pass` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_manifest_check(
    manifest: *const NfManifest,
    index: usize,
    name: *mut *mut c_char,
    pass: *mut c_int,
) -> NfStatus {
    guard(|| {
        let m = &handle(manifest, "manifest")?.0;
        let check = m.checks.get(index).ok_or_else(|| {
            Failure(NfStatus::OutOfRange, format!("check {index} of {}", m.checks.len()))
        })?;
        if pass.is_null() {
            return Err(null("pass"));
        }
        give_string(check.name.clone(), name)?;
        *pass = check.pass as c_int;
        Ok(())
    })
}

/// Manifest as JSON text.
///
/// # Safety
/// `manifest` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_manifest_json(manifest: *const NfManifest, out: *mut *mut c_char) -> NfStatus {
    guard(|| {
        let m = &handle(manifest, "manifest")?.0;
        give_string(m.to_json().to_string(), out)
    })
}

/// # Safety
/// `manifest` must come from [`nf_run`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn nf_manifest_free(manifest: *mut NfManifest) {
    if !manifest.is_null() {
        drop(Box::from_raw(manifest));
    }
}

/// Simulate `n` particles of the configured model and graph with one seed.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_simulate(config: *const NfConfig, n: usize, seed: u64, out: *mut *mut NfEnsemble) -> NfStatus {
    guard(|| {
        let c = &handle(config, "config")?.0;
        let grid = TimeGrid::new(c.grid.horizon, c.grid.steps)?;
        let weights = generate_weights(&c.graph, n, seed)?;
        let inputs = particle_inputs(&c.model, &grid, n, seed);
        let opts = SimOptions { method: c.picard.method, ..SimOptions::default() };
        give(NfEnsemble(simulate_with(&c.model, &weights, &inputs, &grid, seed, &opts)?), out)
    })
}

/// Particles, time steps and state dimension of an ensemble.
///
/// # Safety
/// `ensemble` must be a live handle; the out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_ensemble_shape(
    ensemble: *const NfEnsemble,
    n: *mut usize,
    steps: *mut usize,
    dim: *mut usize,
) -> NfStatus {
    guard(|| {
        let e = &handle(ensemble, "ensemble")?.0;
        if n.is_null() || steps.is_null() || dim.is_null() {
            return Err(null("shape output"));
        }
        *n = e.n();
        *steps = e.grid().steps();
        *dim = e.dim();
        Ok(())
    })
}

/// Copy the `n × dim` states at step `k` into `buf`, which holds `len` doubles.
///
/// # Safety
/// `ensemble` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nf_ensemble_states(
    ensemble: *const NfEnsemble,
    k: usize,
    buf: *mut c_double,
    len: usize,
) -> NfStatus {
    guard(|| {
        let e = &handle(ensemble, "ensemble")?.0;
        if k > e.grid().steps() {
            return Err(Failure(NfStatus::OutOfRange, format!("step {k} beyond {}", e.grid().steps())));
        }
        let states = e.states_at(k);
        if len != states.len() {
            return Err(Failure(NfStatus::SizeMismatch, format!("buffer holds {len} values, need {}", states.len())));
        }
        if buf.is_null() {
            return Err(null("buffer"));
        }
        ptr::copy_nonoverlapping(states.as_ptr(), buf, len);
        Ok(())
    })
}

/// # Safety
/// `ensemble` must come from [`nf_simulate`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn nf_ensemble_free(ensemble: *mut NfEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// Wasserstein-1 distance between two samples on the line.
///
/// # Safety
/// `a` and `b` must hold `na` and `nb` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nf_w1(a: *const c_double, na: usize, b: *const c_double, nb: usize, out: *mut c_double) -> NfStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(null("sample or output"));
        }
        let a = std::slice::from_raw_parts(a, na);
        let b = std::slice::from_raw_parts(b, nb);
        *out = netfield::metrics::w1_1d(a, b)?;
        Ok(())
    })
}
