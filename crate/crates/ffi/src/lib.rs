//! C ABI over the `pslab` core.
//!
//! Queues and environments are opaque heap handles created by `*_new` and
//! released by `*_free`. Every fallible call returns a [`PslabStatus`]; on
//! failure the message is kept per thread and read back with
//! [`pslab_last_error_message`]. Panics are caught at the boundary and
//! reported as [`PslabStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pslab::expansion::AiConvention;
use pslab::mm1::{self, BusyStats};
use pslab::parallel::Pool;
use pslab::{CoefficientEstimate, Error, Estimators, MarkovEnv, Method, QueueParams, StreamKey};

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PslabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidEnvironment = 3,
    Unstable = 4,
    Domain = 5,
    Precondition = 6,
    Fit = 7,
    Internal = 99,
}

/// Estimation route.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PslabMethod {
    McJoint = 0,
    QuadratureHybrid = 1,
    ClosedForm = 2,
}

/// Second-order coefficient selector for [`pslab_estimate_coefficient`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PslabCoefficient {
    APlus = 0,
    AMinus = 1,
    APm = 2,
    BPlus = 3,
    BMinus = 4,
    C = 5,
}

/// Opaque M/M/1 parameters.
pub struct PslabQueue(QueueParams);

/// Opaque Markov environment.
pub struct PslabEnv(MarkovEnv);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PslabBusyStats {
    pub e_b: f64,
    pub e_b2: f64,
    pub e_b3: f64,
    pub e_a: f64,
    pub e_n: f64,
    pub e_nb: f64,
    pub e_d_sum: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PslabEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub method: PslabMethod,
}

/// Coefficients of the expansions of area, busy period and bit rate.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PslabExpansion {
    /// Exact coefficient of `eps` in the mean area.
    pub first_order_area: f64,
    pub a_plus: PslabEstimate,
    pub a_minus: PslabEstimate,
    pub a_pm: PslabEstimate,
    pub b_plus: PslabEstimate,
    pub b_minus: PslabEstimate,
    pub c: PslabEstimate,
    /// `[1, eps, eps^2]` coefficients of the mean area, busy period and bit rate.
    pub area_poly: [f64; 3],
    pub busy_poly: [f64; 3],
    pub bitrate_poly: [f64; 3],
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PslabStatus {
    match e {
        Error::InvalidEnvironment(_) | Error::Reducible { .. } => PslabStatus::InvalidEnvironment,
        Error::Unstable(_) => PslabStatus::Unstable,
        Error::Domain(_) => PslabStatus::Domain,
        Error::Precondition(_) | Error::MissingPart(_) => PslabStatus::Precondition,
        Error::Fit(_) => PslabStatus::Fit,
        Error::UnknownMethod(_) | Error::Config(_) => PslabStatus::InvalidArgument,
        _ => PslabStatus::Internal,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PslabStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PslabStatus::Ok,
        Ok(Err(Fail::Null(name))) => {
            set_error(format!("null pointer: {name}"));
            PslabStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            PslabStatus::InvalidArgument
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            PslabStatus::Internal
        }
    }
}

unsafe fn get<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(name))
}

unsafe fn out<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(name))
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

// Enum inputs arrive as raw integers so that out-of-range values from C are rejected, not UB.
fn to_method(m: u32) -> Result<Method, Fail> {
    match m {
        0 => Ok(Method::McJoint),
        1 => Ok(Method::QuadratureHybrid),
        2 => Ok(Method::ClosedForm),
        _ => Err(Fail::Arg(format!("unknown method code {m}"))),
    }
}

fn to_coefficient(c: u32) -> Result<PslabCoefficient, Fail> {
    use PslabCoefficient::*;
    [APlus, AMinus, APm, BPlus, BMinus, C]
        .get(c as usize)
        .copied()
        .ok_or_else(|| Fail::Arg(format!("unknown coefficient code {c}")))
}

fn from_method(m: Method) -> PslabMethod {
    match m {
        Method::McJoint => PslabMethod::McJoint,
        Method::QuadratureHybrid => PslabMethod::QuadratureHybrid,
        Method::ClosedForm => PslabMethod::ClosedForm,
    }
}

impl From<CoefficientEstimate> for PslabEstimate {
    fn from(e: CoefficientEstimate) -> Self {
        Self { value: e.value, std_error: e.std_error, n_samples: e.n_samples, method: from_method(e.method) }
    }
}

impl From<BusyStats> for PslabBusyStats {
    fn from(s: BusyStats) -> Self {
        Self { e_b: s.e_b, e_b2: s.e_b2, e_b3: s.e_b3, e_a: s.e_a, e_n: s.e_n, e_nb: s.e_nb, e_d_sum: s.e_d_sum }
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pslab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length, or 0 if none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pslab_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// # Safety
/// `out` must be a valid pointer. The handle must be released with
/// [`pslab_queue_free`].
#[no_mangle]
pub unsafe extern "C" fn pslab_queue_new(lambda: f64, mu: f64, out_queue: *mut *mut PslabQueue) -> PslabStatus {
    guard(|| {
        let slot = out(out_queue, "out_queue")?;
        *slot = ptr::null_mut();
        let q = QueueParams::new(lambda, mu)?;
        *slot = Box::into_raw(Box::new(PslabQueue(q)));
        Ok(())
    })
}

/// # Safety
/// `queue` must be null or a handle from [`pslab_queue_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pslab_queue_free(queue: *mut PslabQueue) {
    if !queue.is_null() {
        drop(Box::from_raw(queue));
    }
}

/// Environment from a row-major `n x n` generator, rewards `p` and speed `alpha`.
///
/// # Safety
/// `generator` must point to `n * n` doubles, `p` to `n` doubles and
/// `out_env` must be valid. Release with [`pslab_env_free`].
#[no_mangle]
pub unsafe extern "C" fn pslab_env_new(
    n: usize,
    generator: *const f64,
    p: *const f64,
    alpha: f64,
    out_env: *mut *mut PslabEnv,
) -> PslabStatus {
    guard(|| {
        let slot = out(out_env, "out_env")?;
        *slot = ptr::null_mut();
        if n == 0 {
            return Err(Fail::Arg("state count must be positive".into()));
        }
        let g = slice(generator, n.checked_mul(n).ok_or_else(|| Fail::Arg("state count overflow".into()))?, "generator")?;
        let p = slice(p, n, "p")?;
        let rows = g.chunks(n).map(<[f64]>::to_vec).collect();
        let env = MarkovEnv::new(rows, p.to_vec(), alpha)?;
        *slot = Box::into_raw(Box::new(PslabEnv(env)));
        Ok(())
    })
}

/// # Safety
/// `env` must be null or a handle from [`pslab_env_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pslab_env_free(env: *mut PslabEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Number of environment states, or 0 for a null handle.
///
/// # Safety
/// `env` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pslab_env_state_count(env: *const PslabEnv) -> usize {
    env.as_ref().map_or(0, |e| e.0.state_count())
}

/// Writes the stationary law into `out_pi[0..len]`; `len` must equal the state count.
///
/// # Safety
/// `env` must be live and `out_pi` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pslab_env_stationary(env: *const PslabEnv, out_pi: *mut f64, len: usize) -> PslabStatus {
    guard(|| {
        let env = &get(env, "env")?.0;
        let pi = env.stationary().probabilities();
        if len != pi.len() {
            return Err(Fail::Arg(format!("buffer length {len} != state count {}", pi.len())));
        }
        if out_pi.is_null() {
            return Err(Fail::Null("out_pi"));
        }
        std::slice::from_raw_parts_mut(out_pi, len).copy_from_slice(pi);
        Ok(())
    })
}

/// Stationary mean and variance of `p(X)`.
///
/// # Safety
/// `env`, `out_mean` and `out_var` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pslab_env_p_moments(env: *const PslabEnv, out_mean: *mut f64, out_var: *mut f64) -> PslabStatus {
    guard(|| {
        let m = get(env, "env")?.0.p_moments();
        let (mean, var) = (out(out_mean, "out_mean")?, out(out_var, "out_var")?);
        *mean = m.mean;
        *var = m.variance();
        Ok(())
    })
}

/// Auto-covariance `Cov(p(X(0)), p(X(u)))` under the stationary law.
///
/// # Safety
/// `env` and `out_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pslab_env_covariance(env: *const PslabEnv, u: f64, out_value: *mut f64) -> PslabStatus {
    guard(|| {
        let v = get(env, "env")?.0.covariance(u)?;
        *out(out_value, "out_value")? = v;
        Ok(())
    })
}

/// Closed-form busy-period statistics of the unperturbed queue.
///
/// # Safety
/// `queue` and `out_stats` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pslab_busy_stats(queue: *const PslabQueue, out_stats: *mut PslabBusyStats) -> PslabStatus {
    guard(|| {
        let s = mm1::closed_form_busy_stats(&get(queue, "queue")?.0);
        *out(out_stats, "out_stats")? = s.into();
        Ok(())
    })
}

/// Busy-period Laplace transform `E[e^{-sB}]`.
///
/// # Safety
/// `queue` and `out_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pslab_busy_lst(queue: *const PslabQueue, s: f64, out_value: *mut f64) -> PslabStatus {
    guard(|| {
        let v = mm1::busy_lst(&get(queue, "queue")?.0, s)?;
        *out(out_value, "out_value")? = v;
        Ok(())
    })
}

/// Closed-form two-state limit for `c` at environment speed `alpha`.
///
/// # Safety
/// `queue` and `out_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pslab_auxey_rhs(queue: *const PslabQueue, alpha: f64, var_p: f64, out_value: *mut f64) -> PslabStatus {
    guard(|| {
        let v = mm1::auxey_rhs(&get(queue, "queue")?.0, alpha, var_p)?;
        *out(out_value, "out_value")? = v;
        Ok(())
    })
}

/// Exact area, busy period and bit rate when `p` is the constant `p0`.
///
/// # Safety
/// `queue` and the three output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pslab_constant_p_oracle(
    queue: *const PslabQueue,
    p0: f64,
    eps: f64,
    out_area: *mut f64,
    out_busy: *mut f64,
    out_bitrate: *mut f64,
) -> PslabStatus {
    guard(|| {
        let (a, b, r) = mm1::constant_p_oracle(&get(queue, "queue")?.0, p0, eps)?;
        *out(out_area, "out_area")? = a;
        *out(out_busy, "out_busy")? = b;
        *out(out_bitrate, "out_bitrate")? = r;
        Ok(())
    })
}

fn estimators<'p>(q: &PslabQueue, env: &PslabEnv, seed: u64, pool: &'p Pool) -> Estimators<'p> {
    Estimators::new(q.0, env.0.clone(), StreamKey::new(seed), pool)
}

/// Estimates one second-order coefficient from `n` busy periods.
///
/// `which` is a [`PslabCoefficient`] and `method` a [`PslabMethod`] value.
/// Results depend only on `seed`, `n` and `method`, never on `workers`
/// (`0` uses every core).
///
/// # Safety
/// `queue`, `env` and `out_estimate` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pslab_estimate_coefficient(
    queue: *const PslabQueue,
    env: *const PslabEnv,
    which: u32,
    method: u32,
    n: u64,
    seed: u64,
    workers: usize,
    out_estimate: *mut PslabEstimate,
) -> PslabStatus {
    guard(|| {
        let (q, e) = (get(queue, "queue")?, get(env, "env")?);
        let slot = out(out_estimate, "out_estimate")?;
        let pool = Pool::new(workers);
        let est = estimators(q, e, seed, &pool);
        let m = to_method(method)?;
        let r = match to_coefficient(which)? {
            PslabCoefficient::APlus => est.a_plus(n, m)?,
            PslabCoefficient::AMinus => est.a_minus(n, m)?,
            PslabCoefficient::APm => est.a_pm(n, m, AiConvention::Literal)?,
            PslabCoefficient::BPlus => est.b_plus(n, m)?,
            PslabCoefficient::BMinus => est.b_minus(n, m)?,
            PslabCoefficient::C => est.expansion(n, m)?.c,
        };
        *slot = r.into();
        Ok(())
    })
}

/// Estimates every expansion coefficient from `n` busy periods.
///
/// `method` is a [`PslabMethod`] value.
/// # Safety
/// `queue`, `env` and `out_expansion` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pslab_expansion(
    queue: *const PslabQueue,
    env: *const PslabEnv,
    method: u32,
    n: u64,
    seed: u64,
    workers: usize,
    out_expansion: *mut PslabExpansion,
) -> PslabStatus {
    guard(|| {
        let (q, e) = (get(queue, "queue")?, get(env, "env")?);
        let slot = out(out_expansion, "out_expansion")?;
        let pool = Pool::new(workers);
        let r = estimators(q, e, seed, &pool).expansion(n, to_method(method)?)?;
        *slot = PslabExpansion {
            first_order_area: r.first_order_area,
            a_plus: r.a_plus.into(),
            a_minus: r.a_minus.into(),
            a_pm: r.a_pm.into(),
            b_plus: r.b_plus.into(),
            b_minus: r.b_minus.into(),
            c: r.c.into(),
            area_poly: r.area_poly,
            busy_poly: r.busy_poly,
            bitrate_poly: r.bitrate_poly,
        };
        Ok(())
    })
}
