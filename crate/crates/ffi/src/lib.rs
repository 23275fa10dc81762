//! C ABI over `gridrisk`.
//!
//! Scenarios live behind the opaque [`GrScenario`] handle. Every fallible
//! function returns a [`GrStatus`]; on failure a description is available
//! from [`gr_last_error_message`] on the same thread. Panics never cross the
//! boundary and are reported as [`GrStatus::Panic`].
//!
//! Array arguments are `(pointer, length)` pairs. Output buffers that are too
//! short yield [`GrStatus::BufferTooSmall`] without writing anything.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use gridrisk::case_io::{
    load_case_json, load_scenario_file, parse_matpower, Scenario, ScenarioOverrides,
};
use gridrisk::mc_oracle::{estimate_both, MonteCarloRisk};
use gridrisk::regions::{membership, rup_halfspaces, RegionKind};
use gridrisk::risk_bounds::{assess, Minimizer};
use gridrisk::{Error, FlowFactorization, Probability};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Case text could not be parsed or violates the schema.
    InvalidInput = 3,
    /// The grid is unusable: disconnected, bad parameters, undefined capacities.
    InvalidNetwork = 4,
    /// A matrix failed a numerical precondition.
    Numerical = 5,
    InvalidArgument = 6,
    BufferTooSmall = 7,
    Io = 8,
    Panic = 9,
}

/// Region selector for [`gr_membership`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrRegionKind {
    Up = 0,
    Star = 1,
    /// Sampled region; needs a sample count and a seed.
    Ci = 2,
}

/// Bounds at one mean. `s_star` is NaN when the minimizer is at infinity.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrAssessment {
    pub max_sigma: f64,
    pub r_up: f64,
    pub r_star: f64,
    pub s_star: f64,
    pub threshold: f64,
    pub failure_bound: f64,
    pub in_up: bool,
    pub in_star: bool,
}

/// Monte Carlo estimates with standard errors.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrMcEstimate {
    pub failure_prob: f64,
    pub failure_std_error: f64,
    pub risk: f64,
    pub risk_std_error: f64,
    pub n_samples: usize,
}

/// A loaded scenario with its flow factorization.
pub struct GrScenario {
    scenario: Scenario,
    factors: FlowFactorization,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(GrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Disconnected { .. }
            | Error::DuplicateLine { .. }
            | Error::NonPositiveParameter { .. }
            | Error::BadSlackIndex { .. }
            | Error::InvalidNetwork(_)
            | Error::ZeroMeanFlow { .. }
            | Error::MissingRateA { .. }
            | Error::MissingCapacity { .. } => GrStatus::InvalidNetwork,
            Error::NotSymmetric { .. }
            | Error::NotPsd { .. }
            | Error::MultipleZeroEigenvalues { .. } => GrStatus::Numerical,
            Error::MissingBlock(_)
            | Error::MalformedRow { .. }
            | Error::ZeroReactance { .. }
            | Error::SchemaViolation { .. } => GrStatus::InvalidInput,
            Error::Io(_) => GrStatus::Io,
            _ => GrStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn fail<T>(status: GrStatus, msg: &str) -> Result<T, Fail> {
    Err(Fail(status, msg.to_string()))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GrStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            GrStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return fail(GrStatus::NullPointer, "null string argument");
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(GrStatus::InvalidUtf8, "string argument is not UTF-8"))
}

unsafe fn handle<'a>(h: *const GrScenario) -> Result<&'a GrScenario, Fail> {
    h.as_ref()
        .ok_or_else(|| Fail(GrStatus::NullPointer, "null scenario handle".into()))
}

unsafe fn out_ref<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(GrStatus::NullPointer, "null output pointer".into()))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize) -> Result<&'a mut [f64], Fail> {
    if len < need {
        return fail(
            GrStatus::BufferTooSmall,
            &format!("buffer holds {len} values, need {need}"),
        );
    }
    if p.is_null() {
        return fail(GrStatus::NullPointer, "null output buffer");
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// `mu == NULL` selects the scenario's own mean.
unsafe fn mean_of(h: &GrScenario, mu: *const f64, len: usize) -> Result<Vec<f64>, Fail> {
    if mu.is_null() {
        return Ok(h.scenario.mu().to_vec());
    }
    let d = h.scenario.mu().len();
    if len != d {
        return fail(
            GrStatus::InvalidArgument,
            &format!("mu has {len} entries, expected {d}"),
        );
    }
    Ok(std::slice::from_raw_parts(mu, len).to_vec())
}

/// `q <= 0` selects the scenario's own target.
fn target(h: &GrScenario, q: f64) -> Result<Probability, Fail> {
    if q <= 0.0 {
        Ok(h.scenario.q)
    } else {
        Ok(Probability::new(q)?)
    }
}

unsafe fn publish(sc: Scenario, out: *mut *mut GrScenario) -> Result<(), Fail> {
    let out = out_ref(out)?;
    let (_, factors) = sc.factorize()?;
    *out = Box::into_raw(Box::new(GrScenario {
        scenario: sc,
        factors,
    }));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a JSON scenario from a string.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_scenario_from_json(
    json: *const c_char,
    out: *mut *mut GrScenario,
) -> GrStatus {
    guard(|| publish(load_case_json(text(json)?)?, out))
}

/// Loads a MATPOWER case from a string with i.i.d. injections of
/// `variance` (per-unit²) around the file's injections and line capacities
/// `max(factor·|mean flow|, floor)`. Pass `floor <= 0` for no floor.
///
/// # Safety
/// `matpower` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_scenario_from_matpower(
    matpower: *const c_char,
    variance: f64,
    factor: f64,
    floor: f64,
    q: f64,
    out: *mut *mut GrScenario,
) -> GrStatus {
    guard(|| {
        let case = parse_matpower(text(matpower)?)?;
        let rule = gridrisk::case_io::CapacityRule::FactorOfMean {
            factor,
            floor: (floor > 0.0).then_some(floor),
        };
        publish(
            Scenario::from_case(case, variance, rule, Probability::new(q)?)?,
            out,
        )
    })
}

/// Loads a `.json` or `.m` file with the command-line tool's defaults.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_scenario_load_file(
    path: *const c_char,
    out: *mut *mut GrScenario,
) -> GrStatus {
    guard(|| {
        let sc = load_scenario_file(Path::new(text(path)?), &ScenarioOverrides::default())?;
        publish(sc, out)
    })
}

/// Releases a handle. `NULL` is ignored.
///
/// # Safety
/// `h` must come from a loader of this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gr_scenario_free(h: *mut GrScenario) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Bus count, line count and dimension of μ. Any output may be `NULL`.
///
/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gr_scenario_dims(
    h: *const GrScenario,
    n_buses: *mut usize,
    n_lines: *mut usize,
    mu_dim: *mut usize,
) -> GrStatus {
    guard(|| {
        let h = handle(h)?;
        if let Some(p) = n_buses.as_mut() {
            *p = h.factors.n();
        }
        if let Some(p) = n_lines.as_mut() {
            *p = h.factors.m();
        }
        if let Some(p) = mu_dim.as_mut() {
            *p = h.scenario.mu().len();
        }
        Ok(())
    })
}

/// The scenario's target failure probability.
///
/// # Safety
/// `h` must be a live handle; `q` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_scenario_q(h: *const GrScenario, q: *mut f64) -> GrStatus {
    guard(|| {
        *out_ref(q)? = handle(h)?.scenario.q.get();
        Ok(())
    })
}

/// The scenario's mean injections (length: μ dimension).
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gr_scenario_mu(
    h: *const GrScenario,
    buf: *mut f64,
    len: usize,
) -> GrStatus {
    guard(|| {
        let mu = handle(h)?.scenario.mu();
        out_slice(buf, len, mu.len())?[..mu.len()].copy_from_slice(mu);
        Ok(())
    })
}

/// Per-line standard deviations of the normalized flows (length: lines).
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gr_scenario_sigma(
    h: *const GrScenario,
    buf: *mut f64,
    len: usize,
) -> GrStatus {
    guard(|| {
        let s = handle(h)?.factors.sigma();
        out_slice(buf, len, s.len())?[..s.len()].copy_from_slice(s);
        Ok(())
    })
}

/// Mean normalized flows at `mu` (or the scenario's mean if `mu` is `NULL`).
///
/// # Safety
/// `mu` must hold `mu_len` doubles unless `NULL`; `buf` must hold `len`.
#[no_mangle]
pub unsafe extern "C" fn gr_scenario_nu(
    h: *const GrScenario,
    mu: *const f64,
    mu_len: usize,
    buf: *mut f64,
    len: usize,
) -> GrStatus {
    guard(|| {
        let h = handle(h)?;
        let nu = h.factors.nu_at(&mean_of(h, mu, mu_len)?)?;
        out_slice(buf, len, nu.len())?[..nu.len()].copy_from_slice(&nu);
        Ok(())
    })
}

/// Risk and failure-probability bounds at `mu`. `q <= 0` uses the
/// scenario's target.
///
/// # Safety
/// `mu` must hold `mu_len` doubles unless `NULL`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_assess(
    h: *const GrScenario,
    mu: *const f64,
    mu_len: usize,
    q: f64,
    out: *mut GrAssessment,
) -> GrStatus {
    guard(|| {
        let h = handle(h)?;
        let out = out_ref(out)?;
        let q = target(h, q)?;
        let mu = mean_of(h, mu, mu_len)?;
        let f = h.factors.with_mu(&mu)?;
        let a = assess(&f, q);
        *out = GrAssessment {
            max_sigma: a.max_sigma,
            r_up: a.r_up,
            r_star: a.r_star,
            s_star: match a.s_star {
                Minimizer::At(s) => s,
                Minimizer::Unbounded => f64::NAN,
            },
            threshold: a.threshold,
            failure_bound: a.failure_bound,
            in_up: membership(&f, &mu, q, RegionKind::Up, None)?,
            in_star: membership(&f, &mu, q, RegionKind::Star, None)?,
        };
        Ok(())
    })
}

/// Region membership at `mu`. `n_samples` and `seed` are only read for
/// [`GrRegionKind::Ci`].
///
/// # Safety
/// `mu` must hold `mu_len` doubles unless `NULL`; `inside` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_membership(
    h: *const GrScenario,
    mu: *const f64,
    mu_len: usize,
    q: f64,
    kind: GrRegionKind,
    n_samples: usize,
    seed: u64,
    inside: *mut bool,
) -> GrStatus {
    guard(|| {
        let h = handle(h)?;
        let inside = out_ref(inside)?;
        let q = target(h, q)?;
        let mu = mean_of(h, mu, mu_len)?;
        let est = MonteCarloRisk::new(n_samples, seed);
        *inside = match kind {
            GrRegionKind::Up => membership(&h.factors, &mu, q, RegionKind::Up, None)?,
            GrRegionKind::Star => membership(&h.factors, &mu, q, RegionKind::Star, None)?,
            GrRegionKind::Ci => membership(&h.factors, &mu, q, RegionKind::Ci, Some(&est))?,
        };
        Ok(())
    })
}

/// The explicit region as `A μ ≤ b` with `2·lines` rows; `a` is row-major
/// `2·lines × dim`. `empty` is set when no mean can qualify.
///
/// # Safety
/// `a` must hold `a_len` doubles, `b` `b_len`; `empty` may be `NULL`.
#[no_mangle]
pub unsafe extern "C" fn gr_rup_halfspaces(
    h: *const GrScenario,
    q: f64,
    a: *mut f64,
    a_len: usize,
    b: *mut f64,
    b_len: usize,
    empty: *mut bool,
) -> GrStatus {
    guard(|| {
        let h = handle(h)?;
        let sys = rup_halfspaces(&h.factors, target(h, q)?);
        let (rows, cols) = sys.a.shape();
        let a_out = out_slice(a, a_len, rows * cols)?;
        let b_out = out_slice(b, b_len, rows)?;
        for r in 0..rows {
            for c in 0..cols {
                a_out[r * cols + c] = sys.a[(r, c)];
            }
            b_out[r] = sys.b[r];
        }
        if let Some(e) = empty.as_mut() {
            *e = sys.empty;
        }
        Ok(())
    })
}

/// Monte Carlo failure probability and risk level at `mu`; results depend
/// only on `(mu, n_samples, seed)`.
///
/// # Safety
/// `mu` must hold `mu_len` doubles unless `NULL`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_mc_estimate(
    h: *const GrScenario,
    mu: *const f64,
    mu_len: usize,
    n_samples: usize,
    seed: u64,
    out: *mut GrMcEstimate,
) -> GrStatus {
    guard(|| {
        let h = handle(h)?;
        let out = out_ref(out)?;
        let f = h.factors.with_mu(&mean_of(h, mu, mu_len)?)?;
        let (p, r) = estimate_both(&f, n_samples, seed)?;
        *out = GrMcEstimate {
            failure_prob: p.mean,
            failure_std_error: p.std_error,
            risk: r.mean,
            risk_std_error: r.std_error,
            n_samples: p.n_samples,
        };
        Ok(())
    })
}
