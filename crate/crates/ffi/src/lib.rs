//! C ABI over `fpp-lab`.
//!
//! Objects cross the boundary as opaque handles created by `*_new` /
//! `fpp_law_*` and released by the matching `*_free`. Every fallible call
//! returns an `FppStatus` and writes results through out-pointers; on failure
//! the message is kept per thread and read with `fpp_last_error_message`.
//! Panics are caught at the boundary and reported as `FPP_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use fpp_lab::coupling::QuantileCoupling;
use fpp_lab::distributions::WeightLaw;
use fpp_lab::estimators::concentration_function;
use fpp_lab::experiment::parse_law_spec;
use fpp_lab::fpp::{tau_schedule, Environment, FppError, PassageSolver};
use fpp_lab::lattice::{EdgeId, GridBox, LatticeError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FppStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfRange = 3,
    Panic = 4,
}

/// A weight law together with its quantile coupling.
pub struct FppLaw {
    coupling: Arc<QuantileCoupling>,
}

/// One seeded realisation of the edge weights on a box.
pub struct FppEnvironment {
    env: Environment,
}

/// Reusable Dijkstra workspace for one box radius.
pub struct FppSolver {
    solver: PassageSolver,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("NULs removed"));
}

struct Failure(FppStatus, String);

impl From<FppError> for Failure {
    fn from(e: FppError) -> Self {
        let status = match e {
            FppError::Lattice(LatticeError::OutsideBox { .. }) | FppError::RadiusTooLarge { .. } => {
                FppStatus::OutOfRange
            }
            _ => FppStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl std::fmt::Display) -> Failure {
    Failure(FppStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FppStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FppStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            FppStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(FppStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(FppStatus::NullPointer, format!("`{name}` is null")))
}

unsafe fn write<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(FppStatus::NullPointer, format!("`{name}` is null")));
    }
    out.write(value);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fpp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated to
/// `len` bytes, always NUL-terminated when `len > 0`) and returns the size
/// needed for the full message including its NUL.
#[no_mangle]
pub unsafe extern "C" fn fpp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

fn new_law(law: Result<WeightLaw, Failure>, out: *mut *mut FppLaw) -> Result<(), Failure> {
    let coupling = QuantileCoupling::new(law?).map_err(invalid)?;
    let handle = Box::into_raw(Box::new(FppLaw {
        coupling: Arc::new(coupling),
    }));
    if out.is_null() {
        drop(unsafe { Box::from_raw(handle) });
        return Err(Failure(FppStatus::NullPointer, "`out` is null".into()));
    }
    unsafe { out.write(handle) };
    Ok(())
}

/// Parses `exp:1`, `uniform:1,3`, `gamma:2,1`, `lognormal:0,0.5` or `gaussian`.
#[no_mangle]
pub unsafe extern "C" fn fpp_law_parse(spec: *const c_char, out: *mut *mut FppLaw) -> FppStatus {
    guard(|| {
        let spec = deref(spec, "spec")?;
        let text = CStr::from_ptr(spec).to_str().map_err(invalid)?;
        new_law(parse_law_spec(text).map_err(invalid), out)
    })
}

#[no_mangle]
pub unsafe extern "C" fn fpp_law_exponential(rate: f64, out: *mut *mut FppLaw) -> FppStatus {
    guard(|| new_law(WeightLaw::exponential(rate).map_err(invalid), out))
}

#[no_mangle]
pub unsafe extern "C" fn fpp_law_uniform(lo: f64, hi: f64, out: *mut *mut FppLaw) -> FppStatus {
    guard(|| new_law(WeightLaw::uniform(lo, hi).map_err(invalid), out))
}

#[no_mangle]
pub unsafe extern "C" fn fpp_law_gamma(shape: f64, scale: f64, out: *mut *mut FppLaw) -> FppStatus {
    guard(|| new_law(WeightLaw::gamma(shape, scale).map_err(invalid), out))
}

#[no_mangle]
pub unsafe extern "C" fn fpp_law_lognormal(mu: f64, sigma: f64, out: *mut *mut FppLaw) -> FppStatus {
    guard(|| new_law(WeightLaw::lognormal(mu, sigma).map_err(invalid), out))
}

/// Releases a law; null is a no-op. Environments built from it stay valid.
#[no_mangle]
pub unsafe extern "C" fn fpp_law_free(law: *mut FppLaw) {
    if !law.is_null() {
        drop(Box::from_raw(law));
    }
}

/// G⁻¹(u) for u ∈ (0, 1).
#[no_mangle]
pub unsafe extern "C" fn fpp_law_quantile(law: *const FppLaw, u: f64, out: *mut f64) -> FppStatus {
    guard(|| {
        let law = deref(law, "law")?;
        let q = law.coupling.law().quantile(u).map_err(invalid)?;
        write(out, q, "out")
    })
}

/// h(x) = G⁻¹(Φ(x)).
#[no_mangle]
pub unsafe extern "C" fn fpp_coupling_h(law: *const FppLaw, x: f64, out: *mut f64) -> FppStatus {
    guard(|| {
        let law = deref(law, "law")?;
        if x.is_nan() {
            return Err(invalid("x is NaN"));
        }
        write(out, law.coupling.h(x), "out")
    })
}

/// g_τ(s) = h(h⁻¹(s) + τ).
#[no_mangle]
pub unsafe extern "C" fn fpp_coupling_g_tau(
    law: *const FppLaw,
    s: f64,
    tau: f64,
    out: *mut f64,
) -> FppStatus {
    guard(|| {
        let law = deref(law, "law")?;
        let v = law.coupling.g_tau(s, tau).map_err(invalid)?;
        write(out, v, "out")
    })
}

/// Samples weights on [−radius, radius]² from `seed`. Latents are drawn on
/// demand, so the same seed gives the same weight on every shared edge
/// regardless of radius.
#[no_mangle]
pub unsafe extern "C" fn fpp_environment_new(
    law: *const FppLaw,
    radius: u32,
    seed: u64,
    out: *mut *mut FppEnvironment,
) -> FppStatus {
    guard(|| {
        let law = deref(law, "law")?;
        if out.is_null() {
            return Err(Failure(FppStatus::NullPointer, "`out` is null".into()));
        }
        let grid = GridBox::new(radius).map_err(FppError::from)?;
        let env = Environment::with_coupling(law.coupling.clone(), grid, seed)?;
        out.write(Box::into_raw(Box::new(FppEnvironment { env })));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn fpp_environment_free(env: *mut FppEnvironment) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Weight of the edge from (x, y) to (x+1, y) (axis 0) or (x, y+1) (axis 1).
#[no_mangle]
pub unsafe extern "C" fn fpp_environment_weight(
    env: *const FppEnvironment,
    x: i32,
    y: i32,
    axis: u8,
    out: *mut f64,
) -> FppStatus {
    guard(|| {
        let env = deref(env, "env")?;
        if axis > 1 {
            return Err(invalid(format!("axis must be 0 or 1, got {axis}")));
        }
        let w = env.env.weight(EdgeId::new(x, y, axis))?;
        write(out, w, "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn fpp_solver_new(radius: u32, out: *mut *mut FppSolver) -> FppStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(FppStatus::NullPointer, "`out` is null".into()));
        }
        let solver = PassageSolver::new(radius)?;
        out.write(Box::into_raw(Box::new(FppSolver { solver })));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn fpp_solver_free(solver: *mut FppSolver) {
    if !solver.is_null() {
        drop(Box::from_raw(solver));
    }
}

/// T_r(source, target) restricted to the solver's box, under the schedule
/// τ_r for distance scale `n` (n ≥ 16). r = 0 gives the unperturbed time.
/// `out_edges` may be null; otherwise it receives the geodesic length.
#[no_mangle]
pub unsafe extern "C" fn fpp_solver_passage_time(
    solver: *mut FppSolver,
    env: *const FppEnvironment,
    n: u64,
    r: f64,
    sx: i32,
    sy: i32,
    tx: i32,
    ty: i32,
    out_time: *mut f64,
    out_edges: *mut usize,
) -> FppStatus {
    guard(|| {
        let solver = deref_mut(solver, "solver")?;
        let env = deref(env, "env")?;
        if out_time.is_null() {
            return Err(Failure(FppStatus::NullPointer, "`out_time` is null".into()));
        }
        let perturbed = env.env.perturb(&tau_schedule(n, r)?)?;
        let res = solver.solver.solve(&perturbed, (sx, sy), (tx, ty))?;
        out_time.write(res.time);
        if !out_edges.is_null() {
            out_edges.write(res.geodesic.len());
        }
        Ok(())
    })
}

/// max_a #{values in [a, a+w]} / len and the smallest maximising a.
#[no_mangle]
pub unsafe extern "C" fn fpp_concentration(
    values: *const f64,
    len: usize,
    w: f64,
    out_q_hat: *mut f64,
    out_a_star: *mut f64,
) -> FppStatus {
    guard(|| {
        if values.is_null() {
            return Err(Failure(FppStatus::NullPointer, "`values` is null".into()));
        }
        let slice = std::slice::from_raw_parts(values, len);
        let est = concentration_function(slice, w).map_err(invalid)?;
        write(out_q_hat, est.q_hat, "out_q_hat")?;
        write(out_a_star, est.a_star, "out_a_star")
    })
}

/// ‖τ_r‖₂² for distance scale n.
#[no_mangle]
pub unsafe extern "C" fn fpp_tau_norm_sq(n: u64, r: f64, out: *mut f64) -> FppStatus {
    guard(|| {
        let sched = tau_schedule(n, r)?;
        write(out, sched.norm_sq(), "out")
    })
}
