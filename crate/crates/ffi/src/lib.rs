//! C ABI over `transfer_phase`.
//!
//! Every fallible call returns a [`TpStatus`] and writes its result through an
//! out-pointer. On failure a message for the calling thread is available from
//! [`tp_last_error`]. Specs and solvers are opaque heap handles released with
//! their `_free` functions; strings returned by the library are released with
//! [`tp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use transfer_phase::asymptotic::{predict_gen_error, predict_train_error, AsymptoticSolver, SaddleSolution};
use transfer_phase::empirical::{run_trials, Stat};
use transfer_phase::model::{moments, ActivationKind, LossKind, TaskSpec};
use transfer_phase::phase::{g_threshold, rho_c};
use transfer_phase::prox::moreau;
use transfer_phase::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidSpec = 3,
    NonConvergence = 4,
    NonFinite = 5,
    Parse = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpActivation {
    Identity = 0,
    Relu = 1,
    Sign = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpLoss {
    Squared = 0,
    Logistic = 1,
    Hinge = 2,
}

/// Opaque task specification.
pub struct TpSpec(TaskSpec);

/// Opaque solver; safe to share between threads.
pub struct TpSolver(AsymptoticSolver);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TpSaddle {
    pub q: f64,
    pub r: f64,
    /// Infinite in the full-copy limit.
    pub sigma: f64,
    pub objective: f64,
    pub iterations: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TpPrediction {
    pub source: TpSaddle,
    pub target: TpSaddle,
    pub train_error: f64,
    pub gen_error: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TpMoments {
    pub c: f64,
    pub v: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TpEnvelope {
    pub value: f64,
    pub prox: f64,
    pub d_da: f64,
    pub d_db: f64,
}

/// Means and standard errors over trials; a standard error is NaN when
/// only one trial ran.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TpTrialSummary {
    pub n_trials: u64,
    pub q_hat_mean: f64,
    pub q_hat_se: f64,
    pub r_hat_mean: f64,
    pub r_hat_se: f64,
    pub train_error_mean: f64,
    pub train_error_se: f64,
    pub gen_error_mean: f64,
    pub gen_error_se: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TpStatus {
    match e {
        Error::InvalidSpec(_) => TpStatus::InvalidSpec,
        Error::InvalidArgument(_) | Error::Bracket(_) => TpStatus::InvalidArgument,
        Error::NonConvergence { .. } => TpStatus::NonConvergence,
        Error::NonFinite(_) => TpStatus::NonFinite,
        Error::Json(_) | Error::Csv(_) => TpStatus::Parse,
        Error::Io(_) => TpStatus::Io,
        Error::Trial { source, .. } | Error::AtDelta { source, .. } => status_of(source),
    }
}

struct Fail(TpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(TpStatus::NullPointer, format!("{what} is null"))
}

// Runs `f`, recording any error or panic for `tp_last_error`.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TpStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            TpStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

impl From<SaddleSolution> for TpSaddle {
    fn from(s: SaddleSolution) -> Self {
        TpSaddle {
            q: s.q,
            r: s.r,
            sigma: s.sigma,
            objective: s.objective,
            iterations: s.iterations as u64,
        }
    }
}

impl From<TpSaddle> for SaddleSolution {
    fn from(s: TpSaddle) -> Self {
        SaddleSolution {
            q: s.q,
            r: s.r,
            sigma: s.sigma,
            objective: s.objective,
            iterations: s.iterations as usize,
        }
    }
}

impl From<TpActivation> for ActivationKind {
    fn from(a: TpActivation) -> Self {
        match a {
            TpActivation::Identity => ActivationKind::Identity,
            TpActivation::Relu => ActivationKind::ReLU,
            TpActivation::Sign => ActivationKind::Sign,
        }
    }
}

impl From<TpLoss> for LossKind {
    fn from(l: TpLoss) -> Self {
        match l {
            TpLoss::Squared => LossKind::squared(),
            TpLoss::Logistic => LossKind::logistic(),
            TpLoss::Hinge => LossKind::hinge(),
        }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message from the most recent call on this thread if it failed, else
/// NULL. Valid until the next call into the library from that thread.
#[no_mangle]
pub extern "C" fn tp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a spec from JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_spec_from_json(json: *const c_char, out: *mut *mut TpSpec) -> TpStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Fail(TpStatus::Parse, format!("spec is not UTF-8: {e}")))?;
        let spec: TaskSpec = serde_json::from_str(text).map_err(Error::from)?;
        let spec = spec.validate()?;
        write(out, Box::into_raw(Box::new(TpSpec(spec))), "out")
    })
}

/// Serializes a spec; release the result with `tp_string_free`.
///
/// # Safety
/// `spec` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_spec_to_json(spec: *const TpSpec, out: *mut *mut c_char) -> TpStatus {
    guard(|| {
        let spec = as_ref(spec, "spec")?;
        let text = serde_json::to_string(&spec.0).map_err(Error::from)?;
        let c = CString::new(text).map_err(|e| Fail(TpStatus::Parse, e.to_string()))?;
        write(out, c.into_raw(), "out")
    })
}

/// # Safety
/// `spec` must be NULL or a handle from `tp_spec_from_json`, freed once.
#[no_mangle]
pub unsafe extern "C" fn tp_spec_free(spec: *mut TpSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Solver with default quadrature orders and tolerances.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_solver_new(out: *mut *mut TpSolver) -> TpStatus {
    guard(|| write(out, Box::into_raw(Box::new(TpSolver(AsymptoticSolver::default()))), "out"))
}

/// # Safety
/// `solver` must be NULL or a handle from `tp_solver_new`, freed once.
#[no_mangle]
pub unsafe extern "C" fn tp_solver_free(solver: *mut TpSolver) {
    if !solver.is_null() {
        drop(Box::from_raw(solver));
    }
}

/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_solve_source(
    solver: *const TpSolver,
    spec: *const TpSpec,
    out: *mut TpSaddle,
) -> TpStatus {
    guard(|| {
        let sol = as_ref(solver, "solver")?.0.solve_source(&as_ref(spec, "spec")?.0)?;
        write(out, sol.into(), "out")
    })
}

/// Target saddle given a source solution from `tp_solve_source`.
///
/// # Safety
/// Handles and `source` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_solve_target(
    solver: *const TpSolver,
    spec: *const TpSpec,
    source: *const TpSaddle,
    out: *mut TpSaddle,
) -> TpStatus {
    guard(|| {
        let source: SaddleSolution = (*as_ref(source, "source")?).into();
        let sol = as_ref(solver, "solver")?.0.solve_target(&as_ref(spec, "spec")?.0, &source)?;
        write(out, sol.into(), "out")
    })
}

/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_predict(solver: *const TpSolver, spec: *const TpSpec, out: *mut TpPrediction) -> TpStatus {
    guard(|| {
        let p = as_ref(solver, "solver")?.0.predict(&as_ref(spec, "spec")?.0)?;
        write(
            out,
            TpPrediction {
                source: p.source.into(),
                target: p.target.into(),
                train_error: p.train_error,
                gen_error: p.gen_error,
            },
            "out",
        )
    })
}

/// Generalization error at overlaps `(q, r)`.
///
/// # Safety
/// `spec` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_gen_error(spec: *const TpSpec, q: f64, r: f64, out: *mut f64) -> TpStatus {
    guard(|| {
        let e = predict_gen_error(&as_ref(spec, "spec")?.0, q, r)?;
        write(out, e, "out")
    })
}

/// Training error of a target solution.
///
/// # Safety
/// `spec` and `target` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_train_error(spec: *const TpSpec, target: *const TpSaddle, out: *mut f64) -> TpStatus {
    guard(|| {
        let target: SaddleSolution = (*as_ref(target, "target")?).into();
        write(out, predict_train_error(&as_ref(spec, "spec")?.0, &target), "out")
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_moments(phi: TpActivation, out: *mut TpMoments) -> TpStatus {
    guard(|| {
        let m = moments(phi.into());
        write(out, TpMoments { c: m.c, v: m.v }, "out")
    })
}

/// Critical similarity for regression with an identity predictor.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_rho_c(phi: TpActivation, alpha_s: f64, alpha_t: f64, out: *mut f64) -> TpStatus {
    guard(|| write(out, rho_c(phi.into(), alpha_s, alpha_t)?.rho_c, "out"))
}

/// Sufficient similarity threshold for sign classification.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_g_threshold(alpha_t: f64, alpha_s: f64, out: *mut f64) -> TpStatus {
    guard(|| write(out, g_threshold(alpha_t, alpha_s)?, "out"))
}

/// Moreau envelope of `loss(y; ·)` at `a` with step `b`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_moreau(loss: TpLoss, y: f64, a: f64, b: f64, out: *mut TpEnvelope) -> TpStatus {
    guard(|| {
        let e = moreau(loss.into(), y, a, b)?;
        write(
            out,
            TpEnvelope {
                value: e.value,
                prox: e.prox,
                d_da: e.d_da,
                d_db: e.d_db(),
            },
            "out",
        )
    })
}

fn stat(s: &Stat) -> (f64, f64) {
    (s.mean, s.std_error.unwrap_or(f64::NAN))
}

/// Monte Carlo trials of the spec at dimension `p`, seeds
/// `master_seed, master_seed + 1, …`.
///
/// # Safety
/// `spec` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tp_run_trials(
    spec: *const TpSpec,
    p: u64,
    n_trials: u64,
    master_seed: u64,
    out: *mut TpTrialSummary,
) -> TpStatus {
    guard(|| {
        let s = run_trials(&as_ref(spec, "spec")?.0, p as usize, n_trials as usize, master_seed)?;
        let (q_hat_mean, q_hat_se) = stat(&s.q_hat);
        let (r_hat_mean, r_hat_se) = stat(&s.r_hat);
        let (train_error_mean, train_error_se) = stat(&s.train_error);
        let (gen_error_mean, gen_error_se) = stat(&s.gen_error);
        write(
            out,
            TpTrialSummary {
                n_trials: s.n_trials as u64,
                q_hat_mean,
                q_hat_se,
                r_hat_mean,
                r_hat_se,
                train_error_mean,
                train_error_se,
                gen_error_mean,
                gen_error_se,
            },
            "out",
        )
    })
}
