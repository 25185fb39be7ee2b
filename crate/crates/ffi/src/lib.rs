//! C ABI over the `rigreg` library.
//!
//! Instances and solver results are opaque handles created by `rigreg_*`
//! constructors and released with the matching `*_free`. Every fallible call
//! returns a [`RigregStatus`]; on failure [`rigreg_last_error_message`] gives a
//! description valid until the next call on the same thread. Matrices are
//! copied out row-major into caller buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use rigreg::diagnostics::{clean_rho_bound, kkt_residual_oreg, tightness_eta};
use rigreg::model::{
    build_clean_data_matrix, build_data_matrix, generate_instance, ground_truth_gram,
    DataMatrix, InstanceSpec, PatchScheme, RegistrationInstance,
};
use rigreg::solver::{run, GramIterate, SolverConfig, SolverTrace, Termination, Variant};
use rigreg::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RigregStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    IllPosed = 4,
    NonFinite = 5,
    DegenerateRank = 6,
    ContractViolation = 7,
    Diverged = 8,
    Parse = 9,
    Io = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RigregVariant {
    /// REG-ADMM.
    Nonconvex = 0,
    /// C-ADMM.
    Convex = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RigregTermination {
    Converged = 0,
    MaxIters = 1,
    Oscillating = 2,
}

/// Which matrix of a result to copy out.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RigregMatrix {
    G = 0,
    H = 1,
    Lambda = 2,
}

/// Registration instance together with its data matrix.
pub struct RigregInstance {
    inner: RegistrationInstance,
    c: DataMatrix,
}

/// Final iterate and trace of a solver run.
pub struct RigregResult {
    iterate: GramIterate,
    trace: SolverTrace,
    objective: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> RigregStatus {
    match err {
        Error::DimensionMismatch(_) => RigregStatus::DimensionMismatch,
        Error::InvalidParameter(_) | Error::TraceTooShort { .. } => RigregStatus::InvalidArgument,
        Error::IllPosed(_) => RigregStatus::IllPosed,
        Error::NonFinite(_) => RigregStatus::NonFinite,
        Error::DegenerateRank(_) => RigregStatus::DegenerateRank,
        Error::ContractViolation(_) => RigregStatus::ContractViolation,
        Error::Diverged { .. } => RigregStatus::Diverged,
        Error::Parse(_) | Error::Json(_) | Error::Csv(_) => RigregStatus::Parse,
        Error::Io(_) => RigregStatus::Io,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (RigregStatus, String)>) -> RigregStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RigregStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside rigreg".into());
            RigregStatus::Panic
        }
    }
}

fn lib<T>(r: rigreg::Result<T>) -> Result<T, (RigregStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (RigregStatus, String) {
    (RigregStatus::NullPointer, format!("{what} is null"))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (RigregStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), (RigregStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn copy_matrix(x: &DMatrix<f64>, out: *mut f64, len: usize) -> Result<(), (RigregStatus, String)> {
    let need = x.nrows() * x.ncols();
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < need {
        return Err((
            RigregStatus::BufferTooSmall,
            format!("buffer holds {len} values, need {need}"),
        ));
    }
    let buf = std::slice::from_raw_parts_mut(out, need);
    for r in 0..x.nrows() {
        for c in 0..x.ncols() {
            buf[r * x.ncols() + c] = x[(r, c)];
        }
    }
    Ok(())
}

fn wrap_instance(inner: RegistrationInstance) -> Result<*mut RigregInstance, (RigregStatus, String)> {
    let c = lib(build_data_matrix(&inner))?;
    Ok(Box::into_raw(Box::new(RigregInstance { inner, c })))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rigreg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rigreg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generates a synthetic instance. `overlap == 0` puts every node in every
/// patch; otherwise patches are chained windows sharing `overlap` nodes.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn rigreg_instance_generate(
    d: usize,
    n: usize,
    m: usize,
    overlap: usize,
    sigma: f64,
    seed: u64,
    out: *mut *mut RigregInstance,
) -> RigregStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let scheme = if overlap == 0 {
            PatchScheme::AllNodes
        } else {
            PatchScheme::ChainedOverlap { overlap }
        };
        let spec = InstanceSpec { d, n, m, scheme, sigma, seed };
        let inst = lib(generate_instance(&spec))?;
        out.write(wrap_instance(inst)?);
        Ok(())
    })
}

/// Parses an instance from its JSON representation.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rigreg_instance_from_json(
    json: *const c_char,
    out: *mut *mut RigregInstance,
) -> RigregStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (RigregStatus::Parse, e.to_string()))?;
        let inst = lib(RegistrationInstance::from_json(text))?;
        out.write(wrap_instance(inst)?);
        Ok(())
    })
}

/// JSON representation of an instance, freed with [`rigreg_string_free`].
///
/// # Safety
/// `inst` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rigreg_instance_to_json(
    inst: *const RigregInstance,
    out: *mut *mut c_char,
) -> RigregStatus {
    guard(|| {
        let inst = handle(inst, "instance")?;
        let text = lib(inst.inner.to_json())?;
        let c = CString::new(text).map_err(|e| (RigregStatus::Parse, e.to_string()))?;
        write_out(out, c.into_raw(), "out")
    })
}

/// # Safety
/// `inst` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rigreg_instance_free(inst: *mut RigregInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Block size `d` and matrix side `Md`.
///
/// # Safety
/// `inst` must be a live handle; `d` and `md` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rigreg_instance_dims(
    inst: *const RigregInstance,
    d: *mut usize,
    md: *mut usize,
) -> RigregStatus {
    guard(|| {
        let inst = handle(inst, "instance")?;
        write_out(d, inst.inner.d, "d")?;
        write_out(md, inst.inner.size(), "md")
    })
}

/// Copies the data matrix `C` (row-major, `Md*Md` values).
///
/// # Safety
/// `out` must point to at least `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rigreg_instance_data_matrix(
    inst: *const RigregInstance,
    out: *mut f64,
    len: usize,
) -> RigregStatus {
    guard(|| copy_matrix(handle(inst, "instance")?.c.matrix(), out, len))
}

/// Copies the ground-truth Gram matrix `G0`.
///
/// # Safety
/// `out` must point to at least `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rigreg_instance_ground_truth_gram(
    inst: *const RigregInstance,
    out: *mut f64,
    len: usize,
) -> RigregStatus {
    guard(|| {
        let g0 = lib(ground_truth_gram(&handle(inst, "instance")?.inner))?;
        copy_matrix(g0.matrix(), out, len)
    })
}

/// Noise threshold `η` of the instance's clean data matrix.
///
/// # Safety
/// `inst` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rigreg_tightness_eta(inst: *const RigregInstance, out: *mut f64) -> RigregStatus {
    guard(|| {
        let c0 = lib(build_clean_data_matrix(&handle(inst, "instance")?.inner))?;
        write_out(out, lib(tightness_eta(&c0))?, "out")
    })
}

/// Clean-data penalty bound for the identity start.
///
/// # Safety
/// `inst` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rigreg_clean_rho_bound(inst: *const RigregInstance, out: *mut f64) -> RigregStatus {
    guard(|| {
        let inst = handle(inst, "instance")?;
        let c0 = lib(build_clean_data_matrix(&inst.inner))?;
        let md = inst.inner.size();
        write_out(out, lib(clean_rho_bound(&c0, &DMatrix::identity(md, md)))?, "out")
    })
}

/// Runs the solver from `H = I`, `Λ = 0`. `eps <= 0` selects the default
/// tolerance `1e-9 Md`.
///
/// # Safety
/// `inst` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rigreg_solve(
    inst: *const RigregInstance,
    variant: RigregVariant,
    rho: f64,
    max_iters: usize,
    eps: f64,
    out: *mut *mut RigregResult,
) -> RigregStatus {
    guard(|| {
        let inst = handle(inst, "instance")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let variant = match variant {
            RigregVariant::Nonconvex => Variant::Nonconvex,
            RigregVariant::Convex => Variant::Convex,
        };
        let mut cfg = SolverConfig::new(variant, rho, inst.c.size()).with_max_iters(max_iters);
        if eps > 0.0 {
            cfg = cfg.with_eps(eps);
        }
        let (iterate, trace) = lib(run(&inst.c, &cfg, None, None))?;
        let objective = inst.c.matrix().component_mul(&iterate.g).sum();
        out.write(Box::into_raw(Box::new(RigregResult {
            iterate,
            trace,
            objective,
        })));
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rigreg_result_free(result: *mut RigregResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Iteration count, termination reason and final objective `Tr(C G)`.
///
/// # Safety
/// `result` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rigreg_result_summary(
    result: *const RigregResult,
    iterations: *mut usize,
    termination: *mut RigregTermination,
    objective: *mut f64,
) -> RigregStatus {
    guard(|| {
        let r = handle(result, "result")?;
        let t = match r.trace.termination {
            Some(Termination::Converged) => RigregTermination::Converged,
            Some(Termination::Oscillating) => RigregTermination::Oscillating,
            Some(Termination::MaxIters) | None => RigregTermination::MaxIters,
        };
        write_out(iterations, r.trace.len(), "iterations")?;
        write_out(termination, t, "termination")?;
        write_out(objective, r.objective, "objective")
    })
}

/// Copies `G`, `H` or `Λ` of the final iterate.
///
/// # Safety
/// `out` must point to at least `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rigreg_result_matrix(
    result: *const RigregResult,
    which: RigregMatrix,
    out: *mut f64,
    len: usize,
) -> RigregStatus {
    guard(|| {
        let r = handle(result, "result")?;
        let x = match which {
            RigregMatrix::G => &r.iterate.g,
            RigregMatrix::H => &r.iterate.h,
            RigregMatrix::Lambda => &r.iterate.lambda,
        };
        copy_matrix(x, out, len)
    })
}

/// Trace as CSV text, freed with [`rigreg_string_free`].
///
/// # Safety
/// `result` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rigreg_result_trace_csv(
    result: *const RigregResult,
    out: *mut *mut c_char,
) -> RigregStatus {
    guard(|| {
        let r = handle(result, "result")?;
        let c = CString::new(r.trace.to_csv()).map_err(|e| (RigregStatus::Parse, e.to_string()))?;
        write_out(out, c.into_raw(), "out")
    })
}

/// KKT residual of the orthogonal registration problem at the final `H`.
///
/// # Safety
/// Both handles must be live and belong together; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rigreg_kkt_residual(
    inst: *const RigregInstance,
    result: *const RigregResult,
    out: *mut f64,
) -> RigregStatus {
    guard(|| {
        let inst = handle(inst, "instance")?;
        let r = handle(result, "result")?;
        write_out(out, lib(kkt_residual_oreg(&inst.c, &r.iterate.h))?, "out")
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string from `rigreg_*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rigreg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
