//! C interface: opaque configuration and agent handles, integer status codes
//! and a per-thread message for the most recent failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use d2e::cli::{apply_text, CliError};
use d2e::numerics::RngStream;
use d2e::planner::ActionMode;
use d2e::trainer::{evaluate, load_agent, run_d2e, Agent, RunConfig, RunOptions, TrainError};

/// Status returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum D2eStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    UnknownKey = 3,
    TypeMismatch = 4,
    InvalidConfig = 5,
    Io = 6,
    CorruptCheckpoint = 7,
    VersionMismatch = 8,
    ConfigMismatch = 9,
    BufferTooSmall = 10,
    InvalidArgument = 11,
    Failed = 12,
    Panic = 13,
}

/// Run configuration. Create with [`d2e_config_new`], release with [`d2e_config_free`].
pub struct D2eConfig {
    inner: RunConfig,
}

/// Trained agent. Create with [`d2e_agent_load`], release with [`d2e_agent_free`].
pub struct D2eAgent {
    inner: Agent,
    rng: RngStream,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let clean = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = clean);
}

struct Failure(D2eStatus, String);

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let status = match &e {
            TrainError::Config(c) => return Failure(config_status(c), e.to_string()),
            TrainError::CorruptCheckpoint(_) => D2eStatus::CorruptCheckpoint,
            TrainError::VersionMismatch { .. } => D2eStatus::VersionMismatch,
            TrainError::ConfigMismatch => D2eStatus::ConfigMismatch,
            TrainError::Io(_) => D2eStatus::Io,
            _ => D2eStatus::Failed,
        };
        Failure(status, e.to_string())
    }
}

impl From<d2e::trainer::ConfigError> for Failure {
    fn from(e: d2e::trainer::ConfigError) -> Self {
        Failure(config_status(&e), e.to_string())
    }
}

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        match e {
            CliError::Train(t) => t.into(),
            CliError::Config { source, .. } => source.into(),
            CliError::Io { .. } => Failure(D2eStatus::Io, e.to_string()),
            other => Failure(D2eStatus::Failed, other.to_string()),
        }
    }
}

fn config_status(e: &d2e::trainer::ConfigError) -> D2eStatus {
    use d2e::trainer::ConfigError::*;
    match e {
        UnknownKey(_) => D2eStatus::UnknownKey,
        TypeMismatch { .. } | MissingRequired(_) => D2eStatus::TypeMismatch,
        Syntax { .. } | Invalid(_) => D2eStatus::InvalidConfig,
    }
}

fn fail(status: D2eStatus, message: &str) -> Failure {
    Failure(status, message.into())
}

/// Run `body`, translating errors and panics into a status and message.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> D2eStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            D2eStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&msg);
            D2eStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(D2eStatus::NullPointer, &format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(D2eStatus::InvalidUtf8, &format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(D2eStatus::NullPointer, &format!("{what} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(D2eStatus::NullPointer, &format!("{what} is null")))
}

/// Message for the last failing call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn d2e_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn d2e_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New configuration holding the defaults.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn d2e_config_new(out: *mut *mut D2eConfig) -> D2eStatus {
    guard(|| {
        let out = handle_mut(out, "out")?;
        *out = Box::into_raw(Box::new(D2eConfig { inner: RunConfig::default() }));
        Ok(())
    })
}

/// # Safety
/// `config` must come from [`d2e_config_new`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn d2e_config_free(config: *mut D2eConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Set one `key` to the text `value`.
///
/// # Safety
/// `config` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn d2e_config_set(config: *mut D2eConfig, key: *const c_char, value: *const c_char) -> D2eStatus {
    guard(|| {
        let c = handle_mut(config, "config")?;
        c.inner.set(text(key, "key")?, text(value, "value")?)?;
        Ok(())
    })
}

/// Apply a flat `key=value` text (one pair per line, `#` comments).
///
/// # Safety
/// `config` must be a live handle; `body` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn d2e_config_apply_text(config: *mut D2eConfig, body: *const c_char) -> D2eStatus {
    guard(|| {
        let c = handle_mut(config, "config")?;
        apply_text(&mut c.inner, text(body, "text")?)?;
        Ok(())
    })
}

/// Copy the value of `key` into `buf` (NUL-terminated). `needed` receives the
/// length including the terminator; when `capacity` is too small nothing is
/// written and [`D2eStatus::BufferTooSmall`] is returned.
///
/// # Safety
/// `config` must be a live handle, `key` a NUL-terminated string, `buf` valid
/// for `capacity` bytes (or null with capacity 0) and `needed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn d2e_config_get(
    config: *const D2eConfig,
    key: *const c_char,
    buf: *mut c_char,
    capacity: usize,
    needed: *mut usize,
) -> D2eStatus {
    guard(|| {
        let c = handle(config, "config")?;
        let key = text(key, "key")?;
        let value = c.inner.get(key).ok_or_else(|| fail(D2eStatus::UnknownKey, &format!("unknown key {key:?}")))?;
        let len = value.len() + 1;
        if let Some(n) = needed.as_mut() {
            *n = len;
        }
        if capacity < len || buf.is_null() {
            return Err(fail(D2eStatus::BufferTooSmall, &format!("{len} bytes needed")));
        }
        ptr::copy_nonoverlapping(value.as_ptr(), buf.cast(), value.len());
        *buf.add(value.len()) = 0;
        Ok(())
    })
}

/// Train under `config`, writing metrics and checkpoints to `out_dir`.
/// `final_return` (optional) receives the mean of the last evaluation,
/// NaN when none ran.
///
/// # Safety
/// `config` must be a live handle, `out_dir` a NUL-terminated string and
/// `final_return` null or writable.
#[no_mangle]
pub unsafe extern "C" fn d2e_train(config: *const D2eConfig, out_dir: *const c_char, final_return: *mut f64) -> D2eStatus {
    guard(|| {
        let c = handle(config, "config")?;
        let dir = PathBuf::from(text(out_dir, "out_dir")?);
        let report = run_d2e(&c.inner, &RunOptions { out_dir: Some(dir), ..RunOptions::default() })?;
        if let Some(out) = final_return.as_mut() {
            *out = report
                .final_eval
                .map_or(f64::NAN, |r| r.iter().sum::<f64>() / r.len().max(1) as f64);
        }
        Ok(())
    })
}

/// Load the agent stored at `checkpoint` by a run of `config`.
///
/// # Safety
/// `config` must be a live handle, `checkpoint` a NUL-terminated string and
/// `out` writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn d2e_agent_load(config: *const D2eConfig, checkpoint: *const c_char, out: *mut *mut D2eAgent) -> D2eStatus {
    guard(|| {
        let c = handle(config, "config")?;
        let path = PathBuf::from(text(checkpoint, "checkpoint")?);
        let out = handle_mut(out, "out")?;
        let agent = load_agent(&c.inner, &path)?;
        let rng = RngStream::new(c.inner.seed).split("ffi");
        *out = Box::into_raw(Box::new(D2eAgent { inner: agent, rng }));
        Ok(())
    })
}

/// # Safety
/// `agent` must come from [`d2e_agent_load`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn d2e_agent_free(agent: *mut D2eAgent) {
    if !agent.is_null() {
        drop(Box::from_raw(agent));
    }
}

/// Observation and action widths of the agent's environment.
///
/// # Safety
/// `agent` must be a live handle; the outputs null or writable.
#[no_mangle]
pub unsafe extern "C" fn d2e_agent_dims(agent: *const D2eAgent, obs_dim: *mut usize, action_dim: *mut usize) -> D2eStatus {
    guard(|| {
        let a = handle(agent, "agent")?;
        if let Some(o) = obs_dim.as_mut() {
            *o = a.inner.spec.observation.dim();
        }
        if let Some(o) = action_dim.as_mut() {
            *o = a.inner.spec.action_dim();
        }
        Ok(())
    })
}

/// Action for one observation, in the environment's action box. With
/// `explore` nonzero the action is a policy draw, otherwise the greedy one.
///
/// # Safety
/// `agent` must be a live handle, `obs` valid for `obs_len` reads and
/// `action` valid for `action_len` writes.
#[no_mangle]
pub unsafe extern "C" fn d2e_agent_act(
    agent: *mut D2eAgent,
    obs: *const f64,
    obs_len: usize,
    explore: i32,
    action: *mut f64,
    action_len: usize,
) -> D2eStatus {
    guard(|| {
        let a = handle_mut(agent, "agent")?;
        if obs.is_null() || action.is_null() {
            return Err(fail(D2eStatus::NullPointer, "observation or action buffer is null"));
        }
        let (od, ad) = (a.inner.spec.observation.dim(), a.inner.spec.action_dim());
        if obs_len != od || action_len != ad {
            return Err(fail(
                D2eStatus::InvalidArgument,
                &format!("expected {od} observation and {ad} action values, got {obs_len} and {action_len}"),
            ));
        }
        let o = std::slice::from_raw_parts(obs, obs_len);
        let mode = if explore != 0 { ActionMode::Explore } else { ActionMode::Exploit };
        let unit = a.inner.act(o, mode, &mut a.rng)?;
        let scaled = a.inner.spec.scale_action(&unit);
        std::slice::from_raw_parts_mut(action, action_len).copy_from_slice(&scaled);
        Ok(())
    })
}

/// Mean and standard deviation of greedy returns over `episodes` seeded episodes.
///
/// # Safety
/// `agent` must be a live handle; `mean` and `sd` null or writable.
#[no_mangle]
pub unsafe extern "C" fn d2e_agent_evaluate(agent: *const D2eAgent, episodes: usize, seed: u64, mean: *mut f64, sd: *mut f64) -> D2eStatus {
    guard(|| {
        let a = handle(agent, "agent")?;
        if episodes == 0 {
            return Err(fail(D2eStatus::InvalidArgument, "episodes must be positive"));
        }
        let r = evaluate(&a.inner, a.inner.config.env, episodes, seed)?;
        let n = r.len() as f64;
        let m = r.iter().sum::<f64>() / n;
        let var = r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        if let Some(o) = mean.as_mut() {
            *o = m;
        }
        if let Some(o) = sd.as_mut() {
            *o = var.sqrt();
        }
        Ok(())
    })
}
