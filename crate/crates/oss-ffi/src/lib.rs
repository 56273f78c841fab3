//! C ABI over the stepsize-schedule search library.
//!
//! Handles are opaque pointers created and freed here; every fallible call
//! returns an [`OssStatus`] and records a thread-local message retrievable
//! via [`oss_last_error_message`]. The generated header lives at
//! `include/oss.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::Deserialize;

use oss_core::field::ExecProvider;
use oss_core::rng::{sample_noise, SEARCH_STREAM_BASE};
use oss_core::schedule::teacher_grid;
use oss_core::search::dp_search;
use oss_core::solver::rollout;
use oss_core::{
    CostMetric, GaussianMixture, NoiseSchedule, OssError, StudentSchedule, VelocityProvider,
};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OssStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    DomainError = 4,
    ProtocolError = 5,
    ProviderError = 6,
    NumericalError = 7,
    Infeasible = 8,
    CapExceeded = 9,
    InternalError = 10,
    IoError = 11,
    Panic = 12,
}

/// Opaque velocity-provider handle.
pub struct OssProvider {
    inner: Box<dyn VelocityProvider>,
}

/// Opaque searched-schedule handle.
pub struct OssSchedule {
    inner: StudentSchedule,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn record_error(msg: String) {
    let safe = CString::new(msg).unwrap_or_else(|_| CString::new("error message had NUL").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = safe);
}

fn status_of(err: &OssError) -> OssStatus {
    match err {
        OssError::InvalidArgument(_) => OssStatus::InvalidArgument,
        OssError::Domain(_) => OssStatus::DomainError,
        OssError::Protocol { .. } => OssStatus::ProtocolError,
        OssError::Provider { .. } => OssStatus::ProviderError,
        OssError::Numerical { .. } => OssStatus::NumericalError,
        OssError::Infeasible(_) => OssStatus::Infeasible,
        OssError::CapExceeded { .. } => OssStatus::CapExceeded,
        OssError::Internal(_) => OssStatus::InternalError,
        OssError::Io(_) => OssStatus::IoError,
    }
}

fn fail(err: OssError) -> OssStatus {
    let status = status_of(&err);
    record_error(err.to_string());
    status
}

fn guard(body: impl FnOnce() -> OssStatus) -> OssStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            record_error("panic caught at the FFI boundary".into());
            OssStatus::Panic
        }
    }
}

unsafe fn read_cstr<'a>(ptr: *const c_char) -> Result<&'a str, OssStatus> {
    if ptr.is_null() {
        record_error("null string pointer".into());
        return Err(OssStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        record_error("string is not valid UTF-8".into());
        OssStatus::InvalidUtf8
    })
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn oss_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Create a provider from a Gaussian-mixture spec JSON
/// (`{"dim":D,"components":[{"weight":..,"mean":[..],"scale":..},..]}`).
///
/// # Safety
/// `spec_json` must be a NUL-terminated string; `out` must be a valid
/// destination pointer. The returned handle must be freed with
/// [`oss_provider_free`].
#[no_mangle]
pub unsafe extern "C" fn oss_mixture_provider_new(
    spec_json: *const c_char,
    out: *mut *mut OssProvider,
) -> OssStatus {
    guard(|| {
        if out.is_null() {
            record_error("null output pointer".into());
            return OssStatus::NullPointer;
        }
        let text = match read_cstr(spec_json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let mixture: GaussianMixture = match serde_json::from_str(text) {
            Ok(m) => m,
            Err(e) => return fail(OssError::InvalidArgument(format!("mixture spec: {e}"))),
        };
        let handle = Box::new(OssProvider {
            inner: Box::new(mixture),
        });
        *out = Box::into_raw(handle);
        OssStatus::Ok
    })
}

/// Create a provider that spawns `command` (via `sh -c`) and speaks the
/// newline-delimited JSON protocol on its stdio.
///
/// # Safety
/// Same contracts as [`oss_mixture_provider_new`].
#[no_mangle]
pub unsafe extern "C" fn oss_exec_provider_new(
    command: *const c_char,
    dim: usize,
    out: *mut *mut OssProvider,
) -> OssStatus {
    guard(|| {
        if out.is_null() {
            record_error("null output pointer".into());
            return OssStatus::NullPointer;
        }
        let text = match read_cstr(command) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ExecProvider::spawn(text, dim) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(OssProvider { inner: Box::new(p) }));
                OssStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// State dimension of a provider; 0 for a null handle.
///
/// # Safety
/// `provider` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn oss_provider_dim(provider: *const OssProvider) -> usize {
    if provider.is_null() {
        return 0;
    }
    (*provider).inner.dim()
}

/// Batched velocity evaluation over flat row-major arrays: `states` holds
/// `count * dim` values, `times` holds `count`, and `out_velocities`
/// receives `count * dim` values.
///
/// # Safety
/// All pointers must cover the stated extents; `provider` must be live.
#[no_mangle]
pub unsafe extern "C" fn oss_provider_velocity_batch(
    provider: *mut OssProvider,
    states: *const f64,
    times: *const f64,
    count: usize,
    out_velocities: *mut f64,
) -> OssStatus {
    guard(|| {
        if provider.is_null()
            || (count > 0 && (states.is_null() || times.is_null() || out_velocities.is_null()))
        {
            record_error("null pointer argument".into());
            return OssStatus::NullPointer;
        }
        let provider = &mut *provider;
        let dim = provider.inner.dim();
        let state_rows: Vec<Vec<f64>> = (0..count)
            .map(|i| std::slice::from_raw_parts(states.add(i * dim), dim).to_vec())
            .collect();
        let time_vals = std::slice::from_raw_parts(times, count);
        match provider.inner.velocity_batch(&state_rows, time_vals) {
            Ok(vels) => {
                for (i, v) in vels.iter().enumerate() {
                    std::ptr::copy_nonoverlapping(v.as_ptr(), out_velocities.add(i * dim), dim);
                }
                OssStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `provider` must be a handle from this library, not yet freed, or null.
#[no_mangle]
pub unsafe extern "C" fn oss_provider_free(provider: *mut OssProvider) {
    if !provider.is_null() {
        drop(Box::from_raw(provider));
    }
}

#[derive(Deserialize)]
struct SearchConfig {
    teacher_steps: usize,
    student_steps: usize,
    #[serde(default = "default_order")]
    order: usize,
    #[serde(default = "default_metric")]
    metric: CostMetric,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    schedule: NoiseSchedule,
}

fn default_order() -> usize {
    1
}
fn default_metric() -> CostMetric {
    CostMetric::XtMse
}

/// Search the optimal schedule for one seeded sample. `config_json` is
/// `{"teacher_steps":N,"student_steps":M,"order":1,"metric":"xt-mse",
/// "seed":0,"schedule":{"kind":"fm"}}`; omitted fields default as shown.
///
/// # Safety
/// `provider` must be live; `config_json` NUL-terminated; `out` valid. The
/// returned handle must be freed with [`oss_schedule_free`].
#[no_mangle]
pub unsafe extern "C" fn oss_search_schedule(
    provider: *mut OssProvider,
    config_json: *const c_char,
    out: *mut *mut OssSchedule,
) -> OssStatus {
    guard(|| {
        if provider.is_null() || out.is_null() {
            record_error("null pointer argument".into());
            return OssStatus::NullPointer;
        }
        let text = match read_cstr(config_json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let cfg: SearchConfig = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => return fail(OssError::InvalidArgument(format!("search config: {e}"))),
        };
        let provider = &mut *provider;
        let mut run = || -> oss_core::Result<StudentSchedule> {
            let grid = teacher_grid(&cfg.schedule, cfg.teacher_steps)?;
            let x = sample_noise(provider.inner.dim(), cfg.seed, SEARCH_STREAM_BASE);
            let teacher = rollout(provider.inner.as_mut(), &grid, &x, cfg.order)?;
            let (mut schedule, _) = dp_search(
                provider.inner.as_mut(),
                &teacher,
                cfg.student_steps,
                cfg.metric,
                cfg.order,
            )?;
            schedule.seed = cfg.seed;
            schedule.schedule = Some(cfg.schedule.clone());
            Ok(schedule)
        };
        match run() {
            Ok(schedule) => {
                *out = Box::into_raw(Box::new(OssSchedule { inner: schedule }));
                OssStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of schedule points (M + 1); 0 for a null handle.
///
/// # Safety
/// `schedule` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn oss_schedule_len(schedule: *const OssSchedule) -> usize {
    if schedule.is_null() {
        return 0;
    }
    (*schedule).inner.indices.len()
}

/// Copy the teacher-grid indices (descending from N to 0) into `out`.
///
/// # Safety
/// `out` must hold at least `len` elements, with `len` from
/// [`oss_schedule_len`].
#[no_mangle]
pub unsafe extern "C" fn oss_schedule_indices(
    schedule: *const OssSchedule,
    out: *mut u64,
    len: usize,
) -> OssStatus {
    guard(|| {
        if schedule.is_null() || out.is_null() {
            record_error("null pointer argument".into());
            return OssStatus::NullPointer;
        }
        let indices = &(*schedule).inner.indices;
        if len < indices.len() {
            return fail(OssError::InvalidArgument(format!(
                "buffer holds {len} entries but the schedule has {}",
                indices.len()
            )));
        }
        for (i, &idx) in indices.iter().enumerate() {
            *out.add(i) = idx as u64;
        }
        OssStatus::Ok
    })
}

/// Copy the flow-matching times (descending from 1 to 0) into `out`.
///
/// # Safety
/// Same contracts as [`oss_schedule_indices`].
#[no_mangle]
pub unsafe extern "C" fn oss_schedule_times(
    schedule: *const OssSchedule,
    out: *mut f64,
    len: usize,
) -> OssStatus {
    guard(|| {
        if schedule.is_null() || out.is_null() {
            record_error("null pointer argument".into());
            return OssStatus::NullPointer;
        }
        let times = &(*schedule).inner.times;
        if len < times.len() {
            return fail(OssError::InvalidArgument(format!(
                "buffer holds {len} entries but the schedule has {}",
                times.len()
            )));
        }
        std::ptr::copy_nonoverlapping(times.as_ptr(), out, times.len());
        OssStatus::Ok
    })
}

/// Serialize the schedule to its JSON file format. The returned string must
/// be freed with [`oss_string_free`].
///
/// # Safety
/// `schedule` must be live; `out` must be a valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn oss_schedule_to_json(
    schedule: *const OssSchedule,
    out: *mut *mut c_char,
) -> OssStatus {
    guard(|| {
        if schedule.is_null() || out.is_null() {
            record_error("null pointer argument".into());
            return OssStatus::NullPointer;
        }
        match serde_json::to_string(&(*schedule).inner) {
            Ok(json) => match CString::new(json) {
                Ok(c) => {
                    *out = c.into_raw();
                    OssStatus::Ok
                }
                Err(_) => fail(OssError::internal("schedule JSON contained NUL")),
            },
            Err(e) => fail(OssError::internal(e.to_string())),
        }
    })
}

/// # Safety
/// `schedule` must be a handle from this library, not yet freed, or null.
#[no_mangle]
pub unsafe extern "C" fn oss_schedule_free(schedule: *mut OssSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Free a string returned by [`oss_schedule_to_json`].
///
/// # Safety
/// `s` must originate from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn oss_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
