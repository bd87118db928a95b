//! C ABI over the samplers.
//!
//! Every fallible function returns an [`SmcStatus`]. On failure a
//! description is kept per thread and can be read with
//! [`smc_last_error_message`]. Handles are opaque and owned by the caller,
//! who releases them with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use submanifold_mcmc::config::{ResolvedRun, RunConfig};
use submanifold_mcmc::diagnostics::summary_rates;
use submanifold_mcmc::rng::ChainStreams;
use submanifold_mcmc::sampler::{initial_state, Chain};
use submanifold_mcmc::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    ChainAbort = 3,
    Numeric = 4,
    Io = 5,
    InvalidArgument = 6,
    Panic = 7,
}

/// A validated run configuration.
pub struct SmcConfig {
    run: ResolvedRun,
}

/// One chain of a configuration, advanced on demand.
pub struct SmcChain {
    run: ResolvedRun,
    chain: Chain,
}

/// Summary rates of a chain. Undefined ratios are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SmcSummary {
    pub n_total: u64,
    pub fsr: f64,
    pub bsr: f64,
    pub tar: f64,
    pub mean_jump: f64,
    pub large_jump_rate: f64,
    pub ctf: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SmcStatus {
    match e {
        Error::ChainAbort { .. } => SmcStatus::ChainAbort,
        Error::Io(_) => SmcStatus::Io,
        e if e.is_config_error() => SmcStatus::InvalidConfig,
        _ => SmcStatus::Numeric,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (SmcStatus, String)>) -> SmcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SmcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SmcStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (SmcStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (SmcStatus, String) {
    (SmcStatus::NullPointer, format!("{name} is null"))
}

/// Message of the last failure on this thread, or null if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn smc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses and validates a JSON run configuration.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smc_config_from_json(json: *const c_char, out: *mut *mut SmcConfig) -> SmcStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (SmcStatus::InvalidArgument, format!("json is not UTF-8: {e}")))?;
        let run = RunConfig::from_json(text).and_then(|c| c.resolve()).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SmcConfig { run }));
        Ok(())
    })
}

/// Releases a configuration. Null is ignored.
///
/// # Safety
/// `cfg` must come from [`smc_config_from_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn smc_config_free(cfg: *mut SmcConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Ambient dimension of the configured problem, 0 for a null handle.
///
/// # Safety
/// `cfg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn smc_config_dim(cfg: *const SmcConfig) -> usize {
    cfg.as_ref().map_or(0, |c| c.run.problem.constraint.ambient_dim())
}

/// The configuration with all defaults filled in, as JSON. Release the
/// string with [`smc_string_free`].
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smc_config_to_json(cfg: *const SmcConfig, out: *mut *mut c_char) -> SmcStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = CString::new(cfg.run.config.to_json()).expect("JSON has no NUL bytes");
        *out = s.into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn smc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Runs every chain of the configuration and writes the output files.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn smc_config_execute(cfg: *const SmcConfig) -> SmcStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        submanifold_mcmc::cli::execute(&cfg.run).map(|_| ()).map_err(lib_err)
    })
}

/// Creates chain number `chain` of a configuration at its initial state.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smc_chain_new(cfg: *const SmcConfig, chain: u64, out: *mut *mut SmcChain) -> SmcStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let run = cfg.run.clone();
        let cm = run.problem.constraint.as_ref();
        let mut streams = ChainStreams::new(run.sampler.seed, chain);
        let init = initial_state(&run.sampler, cm, &run.initial_point, None, &mut streams).map_err(lib_err)?;
        let c = Chain::new(run.sampler.clone(), cm, run.problem.tracker, init, chain).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SmcChain { run, chain: c }));
        Ok(())
    })
}

/// Releases a chain. Null is ignored.
///
/// # Safety
/// `chain` must come from [`smc_chain_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn smc_chain_free(chain: *mut SmcChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Advances the chain by `n` iterations.
///
/// # Safety
/// `chain` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn smc_chain_step(chain: *mut SmcChain, n: u64) -> SmcStatus {
    guard(|| {
        let c = chain.as_mut().ok_or_else(|| null("chain"))?;
        let cm = c.run.problem.constraint.clone();
        c.chain.run(cm.as_ref(), n, &mut ()).map_err(lib_err)
    })
}

/// Number of iterations performed so far, 0 for a null handle.
///
/// # Safety
/// `chain` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn smc_chain_iterations(chain: *const SmcChain) -> u64 {
    chain.as_ref().map_or(0, |c| c.chain.iterations_done())
}

/// Copies the current position into `out`, which must hold `len` values
/// with `len` equal to the problem dimension.
///
/// # Safety
/// `chain` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn smc_chain_position(chain: *const SmcChain, out: *mut f64, len: usize) -> SmcStatus {
    guard(|| {
        let c = chain.as_ref().ok_or_else(|| null("chain"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let x = c.chain.state().position();
        if len != x.len() {
            return Err((
                SmcStatus::InvalidArgument,
                format!("buffer holds {len} values, position has {}", x.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(x.as_slice());
        Ok(())
    })
}

/// Summary rates of the iterations performed so far.
///
/// # Safety
/// `chain` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smc_chain_summary(chain: *const SmcChain, out: *mut SmcSummary) -> SmcStatus {
    guard(|| {
        let c = chain.as_ref().ok_or_else(|| null("chain"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let stats = c.chain.stats();
        let r = summary_rates(stats).map_err(lib_err)?;
        *out = SmcSummary {
            n_total: stats.n_total,
            fsr: r.fsr,
            bsr: r.bsr.unwrap_or(f64::NAN),
            tar: r.tar,
            mean_jump: r.mean_jump.unwrap_or(f64::NAN),
            large_jump_rate: r.large_jump_rate,
            ctf: r.ctf,
        };
        Ok(())
    })
}
