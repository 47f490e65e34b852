//! C ABI over the `pwchaos` library.
//!
//! Systems and trajectories are opaque handles created and released through
//! this interface. Every function returns a [`PwcStatus`]; on failure the
//! message is available from [`pwc_last_error`] on the same thread.
//! Strings returned through `char **` are owned by the caller and released
//! with [`pwc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use pwchaos::chaos::{glue, periodic_time_sequence, ChaosError, ChaosSetup, SearchOptions, SymbolWindow};
use pwchaos::integrator::{integrate, IntegratorOptions, Trajectory};
use pwchaos::leaves::LeafOptions;
use pwchaos::melnikov::{Melnikov, MelnikovMode, MelnikovOptions};
use pwchaos::recurrence::SequenceMode;
use pwchaos::spectral::{analyze_origin, derived_constants};
use pwchaos::system::{builtin_example, parse_system, HomoclinicReference, Params, PiecewiseSystem, Region};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PwcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    InvalidArgument = 4,
    Computation = 5,
    Hypotheses = 6,
    NoHomoclinic = 7,
    Panic = 8,
}

/// Melnikov integrand variants.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PwcMelnikovMode {
    FullTrace = 0,
    SimplifiedTraceFree = 1,
}

impl From<PwcMelnikovMode> for MelnikovMode {
    fn from(m: PwcMelnikovMode) -> Self {
        match m {
            PwcMelnikovMode::FullTrace => MelnikovMode::FullTrace,
            PwcMelnikovMode::SimplifiedTraceFree => MelnikovMode::SimplifiedTraceFree,
        }
    }
}

/// A piecewise-smooth system with its homoclinic loop, when known.
pub struct PwcSystem {
    sys: PiecewiseSystem,
    hom: Option<HomoclinicReference>,
}

/// A recorded trajectory.
pub struct PwcTrajectory {
    traj: Trajectory,
}

/// One trajectory sample; `region` is `+1` for `G > 0` and `-1` otherwise.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PwcSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub region: c_int,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

struct Fail(PwcStatus, String);

impl Fail {
    fn new(code: PwcStatus, msg: impl ToString) -> Fail {
        Fail(code, msg.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PwcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PwcStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            PwcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::new(PwcStatus::NullPointer, "null string argument"));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|e| Fail::new(PwcStatus::InvalidUtf8, e))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    unsafe { p.as_ref() }.ok_or_else(|| Fail::new(PwcStatus::NullPointer, "null handle"))
}

unsafe fn write_out<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::new(PwcStatus::NullPointer, "null output pointer"));
    }
    unsafe { out.write(v) };
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    let c = CString::new(s).map_err(|e| Fail::new(PwcStatus::Computation, e))?;
    unsafe { write_out(out, c.into_raw()) }
}

fn hom_of(s: &PwcSystem) -> Result<&HomoclinicReference, Fail> {
    s.hom
        .as_ref()
        .ok_or_else(|| Fail::new(PwcStatus::NoHomoclinic, "no homoclinic loop available for this system"))
}

fn traced_homoclinic(sys: &PiecewiseSystem) -> Option<HomoclinicReference> {
    let (ex1, _) = builtin_example("ex1", &Params::new()).ok()?;
    if ex1.with_perturbation(sys.name(), sys.g_exprs().clone()) == *sys {
        return Some(HomoclinicReference::analytic_ex1());
    }
    let r = analyze_origin(sys, None).ok()?;
    if !(r.verdicts.f0 && r.verdicts.f1) {
        return None;
    }
    HomoclinicReference::numeric(sys, r.lambda_u_minus, r.v_u_minus, r.lambda_s_plus, r.v_s_plus).ok()
}

/// Message of the last failed call on this thread (empty after success).
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pwc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pwc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been released.
#[no_mangle]
pub unsafe extern "C" fn pwc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Parse a system from configuration text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pwc_system_from_config(text: *const c_char, out: *mut *mut PwcSystem) -> PwcStatus {
    guard(|| {
        let text = unsafe { str_arg(text) }?;
        let sys = parse_system(text).map_err(|e| Fail::new(PwcStatus::Config, e))?;
        let hom = traced_homoclinic(&sys);
        unsafe { write_out(out, Box::into_raw(Box::new(PwcSystem { sys, hom }))) }
    })
}

/// Build a named example (`ex1`, `exgen`, ...). `params` is `NULL` or a
/// `key=value;key=value` list.
///
/// # Safety
/// String arguments must be NUL-terminated (or `NULL` for `params`); `out`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn pwc_system_builtin(
    name: *const c_char,
    params: *const c_char,
    out: *mut *mut PwcSystem,
) -> PwcStatus {
    guard(|| {
        let name = unsafe { str_arg(name) }?;
        let mut p = Params::new();
        if !params.is_null() {
            for kv in unsafe { str_arg(params) }?.split(';').filter(|s| !s.trim().is_empty()) {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Fail::new(PwcStatus::InvalidArgument, format!("expected key=value, got `{kv}`")))?;
                p.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let (sys, hom) = builtin_example(name, &p).map_err(|e| Fail::new(PwcStatus::InvalidArgument, e))?;
        unsafe { write_out(out, Box::into_raw(Box::new(PwcSystem { sys, hom }))) }
    })
}

/// Release a system handle.
///
/// # Safety
/// `sys` must come from this library and not have been released.
#[no_mangle]
pub unsafe extern "C" fn pwc_system_free(sys: *mut PwcSystem) {
    if !sys.is_null() {
        drop(unsafe { Box::from_raw(sys) });
    }
}

/// `f^region(x, y) + eps·g(t, x, y, eps)`; `region > 0` selects `f⁺`.
///
/// # Safety
/// `sys` must be a live handle and `out` point to two doubles.
#[no_mangle]
pub unsafe extern "C" fn pwc_system_field(
    sys: *const PwcSystem,
    region: c_int,
    x: f64,
    y: f64,
    t: f64,
    eps: f64,
    out: *mut f64,
) -> PwcStatus {
    guard(|| {
        let s = unsafe { handle(sys) }?;
        let r = if region > 0 { Region::Plus } else { Region::Minus };
        let v = s.sys.field(r, t, [x, y], eps).map_err(|e| Fail::new(PwcStatus::Computation, e))?;
        if out.is_null() {
            return Err(Fail::new(PwcStatus::NullPointer, "null output pointer"));
        }
        unsafe { std::slice::from_raw_parts_mut(out, 2) }.copy_from_slice(&v);
        Ok(())
    })
}

/// Spectral report and constants as JSON.
///
/// # Safety
/// `sys` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pwc_system_analyze_json(sys: *const PwcSystem, out: *mut *mut c_char) -> PwcStatus {
    guard(|| {
        let s = unsafe { handle(sys) }?;
        let r = analyze_origin(&s.sys, s.hom.as_ref()).map_err(|e| Fail::new(PwcStatus::Computation, e))?;
        let c = derived_constants(&r);
        let json = serde_json::json!({ "report": r, "constants": c });
        unsafe { write_string(out, json.to_string()) }
    })
}

/// `M(tau)` and its error estimate.
///
/// # Safety
/// `sys` must be a live handle; `value` and `error` valid.
#[no_mangle]
pub unsafe extern "C" fn pwc_melnikov(
    sys: *const PwcSystem,
    mode: PwcMelnikovMode,
    tau: f64,
    value: *mut f64,
    error: *mut f64,
) -> PwcStatus {
    guard(|| {
        let s = unsafe { handle(sys) }?;
        let m = Melnikov::new(&s.sys, hom_of(s)?, MelnikovOptions::with_mode(mode.into()))
            .map_err(|e| Fail::new(PwcStatus::Computation, e))?;
        let v = m.value(tau).map_err(|e| Fail::new(PwcStatus::Computation, e))?;
        unsafe { write_out(value, v.value) }?;
        unsafe { write_out(error, v.error) }
    })
}

/// `M′(tau)` and its error estimate.
///
/// # Safety
/// As for [`pwc_melnikov`].
#[no_mangle]
pub unsafe extern "C" fn pwc_melnikov_deriv(
    sys: *const PwcSystem,
    mode: PwcMelnikovMode,
    tau: f64,
    value: *mut f64,
    error: *mut f64,
) -> PwcStatus {
    guard(|| {
        let s = unsafe { handle(sys) }?;
        let m = Melnikov::new(&s.sys, hom_of(s)?, MelnikovOptions::with_mode(mode.into()))
            .map_err(|e| Fail::new(PwcStatus::Computation, e))?;
        let v = m.deriv(tau).map_err(|e| Fail::new(PwcStatus::Computation, e))?;
        unsafe { write_out(value, v.value) }?;
        unsafe { write_out(error, v.error) }
    })
}

/// Integrate from `(t0, x0, y0)` to `t1` with default tolerances.
///
/// # Safety
/// `sys` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pwc_integrate(
    sys: *const PwcSystem,
    t0: f64,
    x0: f64,
    y0: f64,
    t1: f64,
    eps: f64,
    out: *mut *mut PwcTrajectory,
) -> PwcStatus {
    guard(|| {
        let s = unsafe { handle(sys) }?;
        let traj = integrate(&s.sys, t0, [x0, y0], t1, eps, &IntegratorOptions::default())
            .map_err(|e| Fail::new(PwcStatus::Computation, e))?;
        unsafe { write_out(out, Box::into_raw(Box::new(PwcTrajectory { traj }))) }
    })
}

/// Number of samples in a trajectory (0 for `NULL`).
///
/// # Safety
/// `traj` must be `NULL` or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pwc_trajectory_len(traj: *const PwcTrajectory) -> usize {
    unsafe { traj.as_ref() }.map_or(0, |t| t.traj.samples.len())
}

/// Number of switching-curve crossings in a trajectory (0 for `NULL`).
///
/// # Safety
/// `traj` must be `NULL` or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pwc_trajectory_event_count(traj: *const PwcTrajectory) -> usize {
    unsafe { traj.as_ref() }.map_or(0, |t| t.traj.events.len())
}

/// Sample `index` of a trajectory.
///
/// # Safety
/// `traj` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pwc_trajectory_sample(traj: *const PwcTrajectory, index: usize, out: *mut PwcSample) -> PwcStatus {
    guard(|| {
        let t = unsafe { handle(traj) }?;
        let s = t
            .traj
            .samples
            .get(index)
            .ok_or_else(|| Fail::new(PwcStatus::InvalidArgument, format!("index {index} out of range")))?;
        let region = match s.region {
            Region::Plus => 1,
            Region::Minus => -1,
        };
        unsafe {
            write_out(
                out,
                PwcSample {
                    t: s.t,
                    x: s.x[0],
                    y: s.x[1],
                    region,
                },
            )
        }
    })
}

/// Release a trajectory handle.
///
/// # Safety
/// `traj` must come from this library and not have been released.
#[no_mangle]
pub unsafe extern "C" fn pwc_trajectory_free(traj: *mut PwcTrajectory) {
    if !traj.is_null() {
        drop(unsafe { Box::from_raw(traj) });
    }
}

/// Glue an orbit for a centred symbol window over the periodic sequence
/// `T_j = j·gap` (perturbation of period 1) and return the result as JSON.
/// Fails with [`PwcStatus::Hypotheses`] outside the supported scenario.
///
/// # Safety
/// `sys` must be a live handle, `symbols` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pwc_shadow_json(
    sys: *const PwcSystem,
    symbols: *const c_char,
    eps: f64,
    gap: f64,
    tol: f64,
    out: *mut *mut c_char,
) -> PwcStatus {
    guard(|| {
        let s = unsafe { handle(sys) }?;
        let symbols = unsafe { str_arg(symbols) }?;
        let hom = hom_of(s)?;
        let e = SymbolWindow::centered(symbols).map_err(|e| Fail::new(PwcStatus::InvalidArgument, e))?;
        let r = analyze_origin(&s.sys, Some(hom)).map_err(|e| Fail::new(PwcStatus::Computation, e))?;
        if !r.verdicts.all() || r.scenario != Some(1) {
            return Err(Fail::new(
                PwcStatus::Hypotheses,
                format!("hypotheses fail: {:?}, scenario {:?}", r.verdicts, r.scenario),
            ));
        }
        let c = derived_constants(&r);
        let reach = e.j_min.abs().max(e.j_max()) as usize;
        let comp = |e: ChaosError| match e {
            ChaosError::Hypotheses(m) => Fail::new(PwcStatus::Hypotheses, m),
            other => Fail::new(PwcStatus::Computation, other),
        };
        let seq = periodic_time_sequence(&s.sys, hom, &c, eps, 1.0, 0.0, gap, 1.0, 2 * reach + 3, SequenceMode::TandKnu, 0.05)
            .map_err(comp)?;
        let opts = SearchOptions {
            tol,
            ..Default::default()
        };
        let setup = ChaosSetup::new(&s.sys, hom, eps, seq, LeafOptions::default(), opts).map_err(comp)?;
        let res = glue(&setup, &e).map_err(comp)?;
        let json = serde_json::to_string(&res).map_err(|e| Fail::new(PwcStatus::Computation, e))?;
        unsafe { write_string(out, json) }
    })
}
