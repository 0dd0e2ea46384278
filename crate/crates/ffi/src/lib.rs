//! C ABI for factorlab.
//!
//! Conventions:
//! - every function returns an [`FlStatus`]; results go through out-pointers;
//! - handles are opaque and owned by the caller, released with the matching
//!   `*_free` function (passing null is a no-op);
//! - on failure, [`fl_last_error`] returns a message for the calling thread,
//!   valid until the next failing call on that thread;
//! - strings returned by the library are released with [`fl_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use factorlab::adjoint::{covariant_derivative, IntegrandBasis, RidgePolicy, RieszRepresenter};
use factorlab::cli::config::ExperimentConfig;
use factorlab::integration::{EnergySpec, RandomVariableSample};
use factorlab::paths::{io, simulate_brownian, simulate_fbm, HurstParameter, PathEnsemble, TimeGrid};
use factorlab::Error;

/// Status code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A parameter, shape or configuration was rejected.
    InvalidArgument = 2,
    /// A numerical failure: divergence, singular system, non-finite value.
    Numerical = 3,
    /// File or serialization failure.
    Io = 4,
    /// A caller-provided buffer is too small.
    BufferTooSmall = 5,
    /// An internal panic was caught at the boundary.
    Panic = 6,
}

/// Simulated path ensemble.
pub struct FlEnsemble(PathEnsemble);

/// Fitted Clark-Ocone integrand of a terminal functional.
pub struct FlRepresenter(RieszRepresenter);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FlStatus {
    match e {
        Error::NonFinite(_)
        | Error::Diverged { .. }
        | Error::Factorization(_)
        | Error::SingularGram { .. }
        | Error::Quadrature(_)
        | Error::Unstable(_)
        | Error::NonIntegrable(_) => FlStatus::Numerical,
        Error::Io(_) | Error::Json(_) | Error::Format(_) => FlStatus::Io,
        _ => FlStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics to a status and a message.
fn guard<F: FnOnce() -> Result<(), (FlStatus, String)>>(f: F) -> FlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FlStatus::Ok,
        Ok(Err((status, msg))) => {
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
            FlStatus::Panic
        }
    }
}

fn lib<T>(r: factorlab::Result<T>) -> Result<T, (FlStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(name: &str) -> (FlStatus, String) {
    (FlStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (FlStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (FlStatus::InvalidArgument, format!("`{name}` is not UTF-8")))
}

/// Message of the last failure on this thread, or null if none. Owned by the
/// library.
#[no_mangle]
pub extern "C" fn fl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by the library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Brownian ensemble of `paths` paths on `steps` uniform steps over
/// `[0, horizon]`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fl_simulate_brownian(
    horizon: f64,
    steps: usize,
    paths: usize,
    seed: u64,
    out: *mut *mut FlEnsemble,
) -> FlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let grid = lib(TimeGrid::new(horizon, steps))?;
        let x = lib(simulate_brownian(&grid, paths, seed))?;
        *out = Box::into_raw(Box::new(FlEnsemble(x)));
        Ok(())
    })
}

/// Fractional Brownian motion with Hurst index `hurst` in `(0, 1)`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fl_simulate_fbm(
    horizon: f64,
    steps: usize,
    hurst: f64,
    paths: usize,
    seed: u64,
    out: *mut *mut FlEnsemble,
) -> FlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let grid = lib(TimeGrid::new(horizon, steps))?;
        let x = lib(simulate_fbm(&grid, lib(HurstParameter::new(hurst))?, paths, seed))?;
        *out = Box::into_raw(Box::new(FlEnsemble(x)));
        Ok(())
    })
}

/// # Safety
/// `e` must be null or a handle from this library, not freed before.
#[no_mangle]
pub unsafe extern "C" fn fl_ensemble_free(e: *mut FlEnsemble) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Number of paths `M` and steps `N`; the path matrix is `M x (N + 1)`.
///
/// # Safety
/// `e` must be a live handle; `paths` and `steps` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fl_ensemble_shape(e: *const FlEnsemble, paths: *mut usize, steps: *mut usize) -> FlStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| null("ensemble"))?;
        if paths.is_null() || steps.is_null() {
            return Err(null("paths/steps"));
        }
        *paths = e.0.num_paths();
        *steps = e.0.grid().steps();
        Ok(())
    })
}

/// Copies the path matrix row-major into `buf`, which must hold
/// `M * (N + 1)` values.
///
/// # Safety
/// `e` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn fl_ensemble_copy_paths(e: *const FlEnsemble, buf: *mut f64, len: usize) -> FlStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| null("ensemble"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let need = e.0.paths().len();
        if len < need {
            return Err((FlStatus::BufferTooSmall, format!("buffer holds {len} values, need {need}")));
        }
        let dst = std::slice::from_raw_parts_mut(buf, need);
        for (d, s) in dst.iter_mut().zip(e.0.paths().iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Writes the ensemble in the binary container format.
///
/// # Safety
/// `e` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fl_ensemble_write_binary(e: *const FlEnsemble, path: *const c_char) -> FlStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| null("ensemble"))?;
        let path = str_arg(path, "path")?;
        let file = std::fs::File::create(Path::new(path)).map_err(|err| (FlStatus::Io, err.to_string()))?;
        lib(io::write_binary(&e.0, std::io::BufWriter::new(file)))
    })
}

/// Reads an ensemble written by [`fl_ensemble_write_binary`].
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fl_ensemble_read_binary(path: *const c_char, out: *mut *mut FlEnsemble) -> FlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let file = std::fs::File::open(Path::new(path)).map_err(|err| (FlStatus::Io, err.to_string()))?;
        let (x, _) = lib(io::read_binary(std::io::BufReader::new(file)))?;
        *out = Box::into_raw(Box::new(FlEnsemble(x)));
        Ok(())
    })
}

/// Fits the Clark-Ocone integrand of the functional whose per-path values
/// are `values[0..M]`, on the basis of `bins` time bins and polynomials of
/// degree `degree`, with the Brownian energy and automatic ridge.
///
/// # Safety
/// `e` must be a live handle, `values` valid for `len` reads and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fl_fit_representer(
    e: *const FlEnsemble,
    values: *const f64,
    len: usize,
    bins: usize,
    degree: usize,
    out: *mut *mut FlRepresenter,
) -> FlStatus {
    guard(|| {
        let e = e.as_ref().ok_or_else(|| null("ensemble"))?;
        if values.is_null() || out.is_null() {
            return Err(null("values/out"));
        }
        let f = RandomVariableSample::new(std::slice::from_raw_parts(values, len).to_vec(), "ffi");
        let basis = lib(IntegrandBasis::new(bins, degree))?;
        let (_, rep) = lib(covariant_derivative(&f, &basis, &e.0, &EnergySpec::BrownianLebesgue, RidgePolicy::Auto))?;
        *out = Box::into_raw(Box::new(FlRepresenter(rep)));
        Ok(())
    })
}

/// # Safety
/// `r` must be null or a handle from this library, not freed before.
#[no_mangle]
pub unsafe extern "C" fn fl_representer_free(r: *mut FlRepresenter) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Sample mean of the functional and the number of basis coefficients.
///
/// # Safety
/// `r` must be a live handle; `mean` and `count` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fl_representer_info(r: *const FlRepresenter, mean: *mut f64, count: *mut usize) -> FlStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("representer"))?;
        if mean.is_null() || count.is_null() {
            return Err(null("mean/count"));
        }
        *mean = r.0.mean;
        *count = r.0.coefficients.len();
        Ok(())
    })
}

/// Copies the basis coefficients into `buf`.
///
/// # Safety
/// `r` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn fl_representer_copy_coefficients(r: *const FlRepresenter, buf: *mut f64, len: usize) -> FlStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("representer"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let c = &r.0.coefficients;
        if len < c.len() {
            return Err((FlStatus::BufferTooSmall, format!("buffer holds {len} values, need {}", c.len())));
        }
        std::slice::from_raw_parts_mut(buf, c.len()).copy_from_slice(c);
        Ok(())
    })
}

/// Evaluates the fitted integrand on `e`, writing the `M x N` matrix
/// row-major into `buf`.
///
/// # Safety
/// Both handles must be live and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn fl_representer_evaluate(
    r: *const FlRepresenter,
    e: *const FlEnsemble,
    buf: *mut f64,
    len: usize,
) -> FlStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("representer"))?;
        let e = e.as_ref().ok_or_else(|| null("ensemble"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let phi = lib(r.0.evaluate(&e.0))?;
        let need = phi.values().len();
        if len < need {
            return Err((FlStatus::BufferTooSmall, format!("buffer holds {len} values, need {need}")));
        }
        let dst = std::slice::from_raw_parts_mut(buf, need);
        for (d, s) in dst.iter_mut().zip(phi.values().iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// JSON serialization of the representer; release with [`fl_string_free`].
///
/// # Safety
/// `r` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fl_representer_to_json(r: *const FlRepresenter, out: *mut *mut c_char) -> FlStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("representer"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let json = lib(r.0.to_json())?;
        *out = CString::new(json).map_err(|e| (FlStatus::Io, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Runs the checks of a JSON experiment config held in memory, without
/// writing any file. `report` receives the report JSON and `passed` whether
/// every check passed.
///
/// # Safety
/// `config_json` must be a nul-terminated string; `report` and `passed`
/// valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fl_run_config(config_json: *const c_char, report: *mut *mut c_char, passed: *mut bool) -> FlStatus {
    guard(|| {
        let text = str_arg(config_json, "config_json")?;
        if report.is_null() || passed.is_null() {
            return Err(null("report/passed"));
        }
        let cfg = lib(ExperimentConfig::from_json(text))?;
        let (r, _) = lib(factorlab::cli::run_suite(&cfg))?;
        let json = lib(r.to_json())?;
        *passed = r.passed();
        *report = CString::new(json).map_err(|e| (FlStatus::Io, e.to_string()))?.into_raw();
        Ok(())
    })
}
