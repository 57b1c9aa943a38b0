//! C ABI over trained KOAP checkpoints.
//!
//! Planners and controllers are opaque handles created by `*_load` and
//! released by `*_free`. Every fallible call returns a [`KoapStatus`]; on
//! failure the message is available from [`koap_last_error`] on the same
//! thread until the next failing call. Matrices cross the boundary as
//! row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use koap::baselines::{Controller, TrainedController};
use koap::planner::{sample_plan, DiffusionModel};
use koap::KoapError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KoapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    BufferTooSmall = 3,
    Dimension = 4,
    Checkpoint = 5,
    Io = 6,
    Config = 7,
    Internal = 8,
}

/// A trained state planner.
pub struct KoapPlanner {
    model: DiffusionModel,
}

/// A trained controller of any method.
pub struct KoapController {
    inner: TrainedController,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    let c = CString::new(text).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(KoapStatus, String);

impl From<KoapError> for Failure {
    fn from(e: KoapError) -> Self {
        let status = match &e {
            KoapError::Dimension { .. } | KoapError::Window(_) => KoapStatus::Dimension,
            KoapError::Checkpoint(_) | KoapError::Json(_) => KoapStatus::Checkpoint,
            KoapError::Io(_) => KoapStatus::Io,
            KoapError::Config(_) | KoapError::Protocol(_) => KoapStatus::Config,
            _ => KoapStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: KoapStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, converting errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KoapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KoapStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            KoapStatus::Internal
        }
    }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, Failure> {
    if path.is_null() {
        return Err(fail(KoapStatus::NullPointer, "path is null"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| fail(KoapStatus::InvalidUtf8, "path is not valid UTF-8"))?;
    Ok(Path::new(s))
}

/// Reads `rows x cols` row-major values; a null pointer is allowed only when
/// `rows == 0`.
unsafe fn rows_arg(data: *const f64, rows: usize, cols: usize, what: &str) -> Result<Vec<Vec<f64>>, Failure> {
    if rows == 0 {
        return Ok(Vec::new());
    }
    if data.is_null() {
        return Err(fail(KoapStatus::NullPointer, format!("{what} is null")));
    }
    let flat = std::slice::from_raw_parts(data, rows * cols);
    Ok(flat.chunks(cols.max(1)).map(<[f64]>::to_vec).collect())
}

unsafe fn write_rows(rows: &[Vec<f64>], out: *mut f64, capacity: usize) -> Result<(), Failure> {
    let needed: usize = rows.iter().map(Vec::len).sum();
    if needed > capacity {
        return Err(fail(
            KoapStatus::BufferTooSmall,
            format!("output needs {needed} values, buffer holds {capacity}"),
        ));
    }
    if needed > 0 && out.is_null() {
        return Err(fail(KoapStatus::NullPointer, "output buffer is null"));
    }
    let dst = std::slice::from_raw_parts_mut(out, needed);
    for (d, s) in dst.iter_mut().zip(rows.iter().flatten()) {
        *d = *s;
    }
    Ok(())
}

unsafe fn store<T>(dst: *mut T, value: T) {
    if !dst.is_null() {
        *dst = value;
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn koap_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a planner checkpoint into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn koap_planner_load(path: *const c_char, out: *mut *mut KoapPlanner) -> KoapStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(KoapStatus::NullPointer, "out is null"));
        }
        let model = DiffusionModel::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(KoapPlanner { model }));
        Ok(())
    })
}

/// Releases a planner; null is ignored.
///
/// # Safety
/// `planner` must come from [`koap_planner_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn koap_planner_free(planner: *mut KoapPlanner) {
    if !planner.is_null() {
        drop(Box::from_raw(planner));
    }
}

/// State dimension, history length and planning horizon of a planner.
///
/// # Safety
/// `planner` must be a live handle; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn koap_planner_dims(
    planner: *const KoapPlanner,
    state_dim: *mut usize,
    history: *mut usize,
    horizon: *mut usize,
) -> KoapStatus {
    guard(|| {
        let p = planner
            .as_ref()
            .ok_or_else(|| fail(KoapStatus::NullPointer, "planner is null"))?;
        let arch = p.model.arch();
        store(state_dim, arch.state_dim);
        store(history, arch.history);
        store(horizon, arch.horizon);
        Ok(())
    })
}

/// Samples one plan. `history` holds `history_len x state_dim` values,
/// oldest first. The plan (current state followed by the horizon) is written
/// row-major to `out`, and its row count to `rows_written`.
///
/// # Safety
/// All buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn koap_planner_sample(
    planner: *const KoapPlanner,
    current: *const f64,
    state_dim: usize,
    history: *const f64,
    history_len: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
    rows_written: *mut usize,
) -> KoapStatus {
    guard(|| {
        let p = planner
            .as_ref()
            .ok_or_else(|| fail(KoapStatus::NullPointer, "planner is null"))?;
        let cur = rows_arg(current, 1, state_dim, "current")?;
        let cur = cur.first().map(Vec::as_slice).unwrap_or(&[]);
        let hist = rows_arg(history, history_len, state_dim, "history")?;
        let plan = sample_plan(&p.model, cur, &hist, seed)?;
        write_rows(&plan.states, out, out_len)?;
        store(rows_written, plan.states.len());
        Ok(())
    })
}

/// Loads a controller checkpoint of any method into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn koap_controller_load(path: *const c_char, out: *mut *mut KoapController) -> KoapStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(KoapStatus::NullPointer, "out is null"));
        }
        let inner = TrainedController::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(KoapController { inner }));
        Ok(())
    })
}

/// Releases a controller; null is ignored.
///
/// # Safety
/// `controller` must come from [`koap_controller_load`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn koap_controller_free(controller: *mut KoapController) {
    if !controller.is_null() {
        drop(Box::from_raw(controller));
    }
}

/// History length and action horizon the controller expects.
///
/// # Safety
/// `controller` must be a live handle; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn koap_controller_window(
    controller: *const KoapController,
    history: *mut usize,
    horizon: *mut usize,
) -> KoapStatus {
    guard(|| {
        let c = controller
            .as_ref()
            .ok_or_else(|| fail(KoapStatus::NullPointer, "controller is null"))?;
        let w = c.inner.window();
        store(history, w.history);
        store(horizon, w.horizon);
        Ok(())
    })
}

/// Infers actions for a plan. `history` holds `history_len` states and
/// `plan` holds `plan_len` states (current state first), each of
/// `state_dim` values. Actions are written row-major to `out`.
///
/// # Safety
/// All buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn koap_controller_infer(
    controller: *const KoapController,
    history: *const f64,
    history_len: usize,
    plan: *const f64,
    plan_len: usize,
    state_dim: usize,
    out: *mut f64,
    out_len: usize,
    rows_written: *mut usize,
    cols_written: *mut usize,
) -> KoapStatus {
    guard(|| {
        let c = controller
            .as_ref()
            .ok_or_else(|| fail(KoapStatus::NullPointer, "controller is null"))?;
        let hist = rows_arg(history, history_len, state_dim, "history")?;
        let plan = rows_arg(plan, plan_len, state_dim, "plan")?;
        let actions = c.inner.infer_actions(&hist, &plan)?;
        write_rows(&actions, out, out_len)?;
        store(rows_written, actions.len());
        store(cols_written, actions.first().map_or(0, Vec::len));
        Ok(())
    })
}
