//! C ABI over the branch-continuation toolkit.
//!
//! Foreign callers work with opaque handles (`BkProblem`, `BkBranch`),
//! integer status codes, and plain buffers. Every entry point catches
//! panics; the last error message per thread is retrievable as a C string.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use branchkit::builtins;
use branchkit::continuation::{trace, Branch, Classification, Side, StepControl};
use branchkit::degree::degree_balance;
use branchkit::mcbvp::MeshProblem;
use branchkit::problem::{ParameterizedSystem, Point};

/// Status codes returned by every fallible entry point.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BkStatus {
    Ok = 0,
    InvalidArgument = 1,
    DomainViolation = 2,
    SingularPoint = 3,
    NoConvergence = 4,
    Unsupported = 5,
    Internal = 6,
}

/// Branch classification labels.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BkClassification {
    Unbounded = 0,
    Boundary = 1,
    BaseReturn = 2,
    WindowExhausted = 3,
    Stalled = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").expect("empty"));
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &branchkit::Error) -> BkStatus {
    use branchkit::Error as E;
    match err {
        E::InvalidParameter { .. } | E::Config(_) | E::NotSquare { .. } | E::Precondition(_) => {
            BkStatus::InvalidArgument
        }
        E::OutsideDomain { .. } | E::Eval(_) | E::BoundaryZero { .. } => BkStatus::DomainViolation,
        E::SingularJacobian { .. }
        | E::RankDeficient { .. }
        | E::DegenerateZero { .. }
        | E::SingularEndpoint { .. } => BkStatus::SingularPoint,
        E::NotAZero { .. } | E::Refine(_) | E::Bracket(_) | E::TrustRegion(_) => {
            BkStatus::NoConvergence
        }
        E::UnsupportedKernelDim { .. } | E::AmbiguousPairing { .. } | E::IsolatedPoint => {
            BkStatus::Unsupported
        }
        E::ReductionFailed(_) | E::Io(_) => BkStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> BkStatus) -> BkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("panic inside the library");
            BkStatus::Internal
        }
    }
}

/// Opaque problem handle: the system plus its start solution.
pub struct BkProblem {
    system: ParameterizedSystem,
    start: Point,
    #[allow(dead_code)]
    mesh: Option<Arc<MeshProblem>>,
}

/// Opaque branch handle.
pub struct BkBranch {
    branch: Branch,
}

/// Trace options mirrored over the C boundary. Zero-initialize and call
/// `bk_trace_options_default` to fill in the defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BkTraceOptions {
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub grow: f64,
    pub shrink: f64,
    pub grow_after: usize,
    pub max_steps: usize,
    pub return_separation: f64,
}

impl From<BkTraceOptions> for StepControl {
    fn from(o: BkTraceOptions) -> Self {
        StepControl {
            h_init: o.h_init,
            h_min: o.h_min,
            h_max: o.h_max,
            newton_tol: o.newton_tol,
            newton_max_iter: o.newton_max_iter,
            grow: o.grow,
            shrink: o.shrink,
            grow_after: o.grow_after,
            max_steps: o.max_steps,
            return_separation: o.return_separation,
        }
    }
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn bk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent error on this thread. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Fills `opts` with the default trace options.
///
/// # Safety
/// `opts` must point to writable memory for one `BkTraceOptions`.
#[no_mangle]
pub unsafe extern "C" fn bk_trace_options_default(opts: *mut BkTraceOptions) -> BkStatus {
    guard(|| {
        if opts.is_null() {
            set_error("opts is null");
            return BkStatus::InvalidArgument;
        }
        let d = StepControl::default();
        unsafe {
            *opts = BkTraceOptions {
                h_init: d.h_init,
                h_min: d.h_min,
                h_max: d.h_max,
                newton_tol: d.newton_tol,
                newton_max_iter: d.newton_max_iter,
                grow: d.grow,
                shrink: d.shrink,
                grow_after: d.grow_after,
                max_steps: d.max_steps,
                return_separation: d.return_separation,
            };
        }
        BkStatus::Ok
    })
}

/// Creates a built-in calibration problem by name
/// ("circle", "fold", "pitchfork", "line").
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn bk_problem_builtin(
    name: *const c_char,
    out: *mut *mut BkProblem,
) -> BkStatus {
    guard(|| {
        if name.is_null() || out.is_null() {
            set_error("name/out is null");
            return BkStatus::InvalidArgument;
        }
        let name = match unsafe { CStr::from_ptr(name) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("name is not valid UTF-8");
                return BkStatus::InvalidArgument;
            }
        };
        match builtins::by_name(name) {
            Ok(b) => {
                let handle = Box::new(BkProblem {
                    system: b.system,
                    start: b.start,
                    mesh: None,
                });
                unsafe { *out = Box::into_raw(handle) };
                BkStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Creates the discretized quasilinear boundary value problem with `m`
/// interior nodes and parameters mu, q, delta. The start solution is the
/// positive state at lambda = 0.
///
/// # Safety
/// `out` must be a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn bk_problem_mcbvp(
    m: usize,
    mu: f64,
    q: f64,
    delta: f64,
    out: *mut *mut BkProblem,
) -> BkStatus {
    guard(|| {
        if out.is_null() {
            set_error("out is null");
            return BkStatus::InvalidArgument;
        }
        let build = || -> branchkit::Result<BkProblem> {
            let mesh = Arc::new(MeshProblem::new(m, mu, q, delta)?);
            let system = mesh.system(1e3, [-5.0, 5.0], 1e-3)?;
            let u0 = mesh.base_solution()?;
            Ok(BkProblem {
                system,
                start: Point::new(0.0, u0)?,
                mesh: Some(mesh),
            })
        };
        match build() {
            Ok(p) => {
                unsafe { *out = Box::into_raw(Box::new(p)) };
                BkStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Overrides the run window and blow-up cap of a problem handle.
///
/// # Safety
/// `problem` must be a live handle from a `bk_problem_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn bk_problem_set_window(
    problem: *mut BkProblem,
    lambda_min: f64,
    lambda_max: f64,
    norm_cap: f64,
) -> BkStatus {
    guard(|| {
        let Some(p) = (unsafe { problem.as_mut() }) else {
            set_error("problem is null");
            return BkStatus::InvalidArgument;
        };
        if !(lambda_min < lambda_max) || !(norm_cap > 0.0) {
            set_error("need lambda_min < lambda_max and norm_cap > 0");
            return BkStatus::InvalidArgument;
        }
        p.system.domain.lambda_window = [lambda_min, lambda_max];
        p.system.domain.norm_cap = norm_cap;
        BkStatus::Ok
    })
}

/// Number of state components of the problem.
///
/// # Safety
/// `problem` must be a live handle; returns 0 on null.
#[no_mangle]
pub unsafe extern "C" fn bk_problem_state_dim(problem: *const BkProblem) -> usize {
    unsafe { problem.as_ref() }.map_or(0, |p| p.system.n_state())
}

/// Copies the start solution into caller-provided storage.
///
/// # Safety
/// `u_out` must hold at least `u_len >= state_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn bk_problem_start(
    problem: *const BkProblem,
    lambda_out: *mut f64,
    u_out: *mut f64,
    u_len: usize,
) -> BkStatus {
    guard(|| {
        let Some(p) = (unsafe { problem.as_ref() }) else {
            set_error("problem is null");
            return BkStatus::InvalidArgument;
        };
        let n = p.system.n_state();
        if lambda_out.is_null() || u_out.is_null() || u_len < n {
            set_error("output buffers missing or too small");
            return BkStatus::InvalidArgument;
        }
        unsafe {
            *lambda_out = p.start.lambda;
            let slice = std::slice::from_raw_parts_mut(u_out, n);
            for (dst, src) in slice.iter_mut().zip(p.start.u.iter()) {
                *dst = *src;
            }
        }
        BkStatus::Ok
    })
}

/// Traces one unilateral branch. `side` is +1 (lambda above the base level)
/// or -1. `opts` may be null for defaults.
///
/// # Safety
/// `problem` must be live; `out` writable; `opts` null or valid.
#[no_mangle]
pub unsafe extern "C" fn bk_trace(
    problem: *const BkProblem,
    side: i32,
    opts: *const BkTraceOptions,
    out: *mut *mut BkBranch,
) -> BkStatus {
    guard(|| {
        let Some(p) = (unsafe { problem.as_ref() }) else {
            set_error("problem is null");
            return BkStatus::InvalidArgument;
        };
        if out.is_null() {
            set_error("out is null");
            return BkStatus::InvalidArgument;
        }
        let side = match side {
            1 => Side::Plus,
            -1 => Side::Minus,
            other => {
                set_error(&format!("side must be +1 or -1, got {other}"));
                return BkStatus::InvalidArgument;
            }
        };
        let ctl: StepControl = match unsafe { opts.as_ref() } {
            Some(o) => (*o).into(),
            None => StepControl::default(),
        };
        match trace(&p.system, &p.start, side, &ctl) {
            Ok(branch) => {
                unsafe { *out = Box::into_raw(Box::new(BkBranch { branch })) };
                BkStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Number of accepted points on the branch.
///
/// # Safety
/// `branch` must be a live handle; returns 0 on null.
#[no_mangle]
pub unsafe extern "C" fn bk_branch_len(branch: *const BkBranch) -> usize {
    unsafe { branch.as_ref() }.map_or(0, |b| b.branch.points.len())
}

/// Classification label of the branch.
///
/// # Safety
/// `branch` must be a live handle; null maps to `Stalled`.
#[no_mangle]
pub unsafe extern "C" fn bk_branch_classification(branch: *const BkBranch) -> BkClassification {
    match unsafe { branch.as_ref() }.map(|b| b.branch.classification) {
        Some(Classification::Unbounded) => BkClassification::Unbounded,
        Some(Classification::Boundary) => BkClassification::Boundary,
        Some(Classification::BaseReturn) => BkClassification::BaseReturn,
        Some(Classification::WindowExhausted) => BkClassification::WindowExhausted,
        Some(Classification::Stalled) | None => BkClassification::Stalled,
    }
}

/// Copies one accepted point into caller storage.
///
/// # Safety
/// `u_out` must hold at least `u_len >= state_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn bk_branch_point(
    branch: *const BkBranch,
    index: usize,
    lambda_out: *mut f64,
    u_out: *mut f64,
    u_len: usize,
) -> BkStatus {
    guard(|| {
        let Some(b) = (unsafe { branch.as_ref() }) else {
            set_error("branch is null");
            return BkStatus::InvalidArgument;
        };
        let Some(p) = b.branch.points.get(index) else {
            set_error(&format!(
                "index {index} out of range ({} points)",
                b.branch.points.len()
            ));
            return BkStatus::InvalidArgument;
        };
        if lambda_out.is_null() || u_out.is_null() || u_len < p.u.len() {
            set_error("output buffers missing or too small");
            return BkStatus::InvalidArgument;
        }
        unsafe {
            *lambda_out = p.lambda;
            let slice = std::slice::from_raw_parts_mut(u_out, p.u.len());
            for (dst, src) in slice.iter_mut().zip(p.u.iter()) {
                *dst = *src;
            }
        }
        BkStatus::Ok
    })
}

/// Degree balance over the base-slice crossings collected by the trace:
/// writes the index sum and whether the balanced predicate holds.
///
/// # Safety
/// `sum_out` and `balanced_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bk_branch_balance(
    branch: *const BkBranch,
    sum_out: *mut i64,
    balanced_out: *mut i32,
) -> BkStatus {
    guard(|| {
        let Some(b) = (unsafe { branch.as_ref() }) else {
            set_error("branch is null");
            return BkStatus::InvalidArgument;
        };
        if sum_out.is_null() || balanced_out.is_null() {
            set_error("output pointers are null");
            return BkStatus::InvalidArgument;
        }
        match degree_balance(&b.branch.crossings) {
            Ok(r) => {
                unsafe {
                    *sum_out = r.index_sum;
                    *balanced_out = r.balanced as i32;
                }
                BkStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Frees a problem handle.
///
/// # Safety
/// `problem` must come from a `bk_problem_*` constructor; double frees are UB.
#[no_mangle]
pub unsafe extern "C" fn bk_problem_free(problem: *mut BkProblem) {
    if !problem.is_null() {
        drop(unsafe { Box::from_raw(problem) });
    }
}

/// Frees a branch handle.
///
/// # Safety
/// `branch` must come from `bk_trace`; double frees are UB.
#[no_mangle]
pub unsafe extern "C" fn bk_branch_free(branch: *mut BkBranch) {
    if !branch.is_null() {
        drop(unsafe { Box::from_raw(branch) });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn builtin_fold_round_trip() {
        let mut problem: *mut BkProblem = ptr::null_mut();
        let name = CString::new("fold").unwrap();
        unsafe {
            assert_eq!(
                bk_problem_builtin(name.as_ptr(), &mut problem),
                BkStatus::Ok
            );
            assert_eq!(bk_problem_state_dim(problem), 1);

            let mut opts = std::mem::zeroed::<BkTraceOptions>();
            assert_eq!(bk_trace_options_default(&mut opts), BkStatus::Ok);

            let mut branch: *mut BkBranch = ptr::null_mut();
            assert_eq!(bk_trace(problem, -1, &opts, &mut branch), BkStatus::Ok);
            assert_eq!(
                bk_branch_classification(branch),
                BkClassification::BaseReturn
            );
            assert!(bk_branch_len(branch) > 3);

            let mut sum = 7i64;
            let mut balanced = 0i32;
            assert_eq!(
                bk_branch_balance(branch, &mut sum, &mut balanced),
                BkStatus::Ok
            );
            assert_eq!(sum, 0);
            assert_eq!(balanced, 1);

            let mut lambda = 0.0f64;
            let mut u = [0.0f64; 1];
            assert_eq!(
                bk_branch_point(branch, 0, &mut lambda, u.as_mut_ptr(), 1),
                BkStatus::Ok
            );
            assert_eq!(lambda, 1.0);
            assert_eq!(u[0], 1.0);

            bk_branch_free(branch);
            bk_problem_free(problem);
        }
    }

    #[test]
    fn unknown_builtin_reports_error() {
        let mut problem: *mut BkProblem = ptr::null_mut();
        let name = CString::new("torus").unwrap();
        unsafe {
            assert_eq!(
                bk_problem_builtin(name.as_ptr(), &mut problem),
                BkStatus::InvalidArgument
            );
        }
        let msg = unsafe { CStr::from_ptr(bk_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("unknown builtin"));
    }

    #[test]
    fn null_arguments_are_rejected() {
        unsafe {
            assert_eq!(
                bk_problem_builtin(ptr::null(), ptr::null_mut()),
                BkStatus::InvalidArgument
            );
            assert_eq!(bk_problem_state_dim(ptr::null()), 0);
            assert_eq!(bk_branch_len(ptr::null()), 0);
            bk_problem_free(ptr::null_mut());
            bk_branch_free(ptr::null_mut());
        }
    }
}
