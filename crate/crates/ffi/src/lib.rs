//! C ABI for the conformal toolkit.
//!
//! Every function returns an [`EpicStatus`]; results go through out-pointers.
//! On failure the message is available from [`epic_last_error`] on the same
//! thread until the next failing call. Fitted predictive models are opaque
//! [`EpicModel`] handles released with [`epic_model_free`].
//!
//! Infinite thresholds and unbounded band ends are reported as IEEE infinities.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::slice;

use epicscore::data::Features;
use epicscore::epic::{class_s_prime, epic_interval_normal_closed_form, PredictionBand};
use epicscore::metrics::{aisl, marginal_coverage};
use epicscore::scores::uncross;
use epicscore::{conformal_quantile, coverage_bounds, fit_predictive, Error, NominalLevel, PredictiveCdfModel};
use epicscore::{PredictiveConfig, PredictiveKind};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpicStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidAlpha = 3,
    EmptyCalibration = 4,
    NonFinite = 5,
    InsufficientData = 6,
    Numerical = 7,
    Io = 8,
    ModelFormat = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpicPredictiveKind {
    GpExact = 0,
    MdnDropout = 1,
    BartLite = 2,
    KnnEmpirical = 3,
}

impl From<EpicPredictiveKind> for PredictiveKind {
    fn from(k: EpicPredictiveKind) -> Self {
        match k {
            EpicPredictiveKind::GpExact => PredictiveKind::GpExact,
            EpicPredictiveKind::MdnDropout => PredictiveKind::MdnDropout,
            EpicPredictiveKind::BartLite => PredictiveKind::BartLite,
            EpicPredictiveKind::KnnEmpirical => PredictiveKind::KnnEmpirical,
        }
    }
}

/// Fitted predictive model of a conformal score.
pub struct EpicModel {
    inner: PredictiveCdfModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> EpicStatus {
    match e {
        Error::InvalidAlpha(_) => EpicStatus::InvalidAlpha,
        Error::EmptyCalibration => EpicStatus::EmptyCalibration,
        Error::NonFiniteScore { .. } => EpicStatus::NonFinite,
        Error::InsufficientData { .. } | Error::SplitTooSmall { .. } => EpicStatus::InsufficientData,
        Error::SingularKernel { .. } => EpicStatus::Numerical,
        Error::Io { .. } => EpicStatus::Io,
        Error::ModelFormat(_) | Error::Json(_) => EpicStatus::ModelFormat,
        _ => EpicStatus::InvalidArgument,
    }
}

struct Fail(EpicStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(EpicStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(EpicStatus::InvalidArgument, msg.into())
}

/// Run `f`, converting errors and panics into a status and the last-error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EpicStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EpicStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            EpicStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

unsafe fn slice_out<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(ptr, len))
}

unsafe fn write<T>(ptr: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    *ptr = value;
    Ok(())
}

unsafe fn model<'a>(m: *const EpicModel) -> Result<&'a PredictiveCdfModel, Fail> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn write_band(b: PredictionBand, lo: *mut f64, hi: *mut f64) -> Result<(), Fail> {
    write(lo, b.lo, "lo")?;
    write(hi, b.hi, "hi")
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn epic_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn epic_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Conformal threshold: the `ceil((n + 1)(1 - alpha))`-th smallest score, or
/// `+inf` when that rank exceeds `n`.
#[no_mangle]
pub unsafe extern "C" fn epic_conformal_quantile(
    scores: *const f64,
    n: usize,
    alpha: f64,
    out: *mut f64,
) -> EpicStatus {
    guard(|| {
        let s = slice_in(scores, n, "scores")?;
        let t = conformal_quantile(s, NominalLevel::new(alpha)?)?;
        write(out, t, "out")
    })
}

/// Marginal coverage bounds `[1 - alpha, 1 - alpha + 1/(1 + n2)]`.
#[no_mangle]
pub unsafe extern "C" fn epic_coverage_bounds(n2: usize, alpha: f64, lower: *mut f64, upper: *mut f64) -> EpicStatus {
    guard(|| {
        let b = coverage_bounds(n2, NominalLevel::new(alpha)?)?;
        write(lower, b.lower, "lower")?;
        write(upper, b.upper, "upper")
    })
}

/// Fit a predictive model of scores `s` given row-major features `x` (`n` rows,
/// `p` columns) with default settings. On success `*out` owns a new handle.
#[no_mangle]
pub unsafe extern "C" fn epic_model_fit(
    kind: EpicPredictiveKind,
    x: *const f64,
    n: usize,
    p: usize,
    s: *const f64,
    seed: u64,
    out: *mut *mut EpicModel,
) -> EpicStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if p == 0 {
            return Err(invalid("p must be >= 1"));
        }
        let x = slice_in(x, n.checked_mul(p).ok_or_else(|| invalid("n * p overflows"))?, "x")?;
        let s = slice_in(s, n, "s")?;
        let features = Features::new(x.to_vec(), p)?;
        let inner = fit_predictive(kind.into(), &features, s, &PredictiveConfig::default(), seed)?;
        *out = Box::into_raw(Box::new(EpicModel { inner }));
        Ok(())
    })
}

/// Release a handle from [`epic_model_fit`] or [`epic_model_load`]. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn epic_model_free(model: *mut EpicModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub unsafe extern "C" fn epic_model_save(model: *const EpicModel, file: *const c_char) -> EpicStatus {
    guard(|| {
        let m = self::model(model)?;
        m.save(&path(file)?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn epic_model_load(file: *const c_char, out: *mut *mut EpicModel) -> EpicStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = PredictiveCdfModel::load(&path(file)?)?;
        *out = Box::into_raw(Box::new(EpicModel { inner }));
        Ok(())
    })
}

unsafe fn row<'a>(m: &PredictiveCdfModel, x: *const f64, p: usize) -> Result<&'a [f64], Fail> {
    let want = m.scaler.mean.len();
    if p != want {
        return Err(invalid(format!("model expects {want} features, got {p}")));
    }
    slice_in(x, p, "x")
}

/// `F(s | x, D)`.
#[no_mangle]
pub unsafe extern "C" fn epic_model_cdf(
    model: *const EpicModel,
    x: *const f64,
    p: usize,
    s: f64,
    out: *mut f64,
) -> EpicStatus {
    guard(|| {
        let m = self::model(model)?;
        let x = row(m, x, p)?;
        write(out, m.cdf(x, s), "out")
    })
}

/// Smallest `s` with `F(s | x, D) >= t`.
#[no_mangle]
pub unsafe extern "C" fn epic_model_invert(
    model: *const EpicModel,
    x: *const f64,
    p: usize,
    t: f64,
    out: *mut f64,
) -> EpicStatus {
    guard(|| {
        if !(0.0..=1.0).contains(&t) {
            return Err(Fail(EpicStatus::InvalidArgument, format!("t must lie in [0, 1], got {t}")));
        }
        let m = self::model(model)?;
        let x = row(m, x, p)?;
        write(out, m.invert_cdf(x, t), "out")
    })
}

/// Transformed scores `s'_i = F(s_i | x_i, D)` for `n` rows of `x`.
#[no_mangle]
pub unsafe extern "C" fn epic_transform_scores(
    model: *const EpicModel,
    x: *const f64,
    n: usize,
    p: usize,
    s: *const f64,
    out: *mut f64,
) -> EpicStatus {
    guard(|| {
        let m = self::model(model)?;
        if p != m.scaler.mean.len() {
            return Err(invalid(format!("model expects {} features, got {p}", m.scaler.mean.len())));
        }
        let x = slice_in(x, n * p, "x")?;
        let s = slice_in(s, n, "s")?;
        let out = slice_out(out, n, "out")?;
        for (i, o) in out.iter_mut().enumerate() {
            *o = m.cdf(&x[i * p..(i + 1) * p], s[i]).clamp(0.0, 1.0);
        }
        Ok(())
    })
}

/// Band `g +- max(0, F^-1(t | x))` for a residual score. An infinite `t`
/// threshold (or `t >= 1`) gives the whole line.
#[no_mangle]
pub unsafe extern "C" fn epic_interval_residual(
    model: *const EpicModel,
    x: *const f64,
    p: usize,
    g: f64,
    t: f64,
    lo: *mut f64,
    hi: *mut f64,
) -> EpicStatus {
    guard(|| {
        let m = self::model(model)?;
        let x = row(m, x, p)?;
        let band = if t >= 1.0 {
            PredictionBand::full()
        } else {
            PredictionBand::symmetric(g, m.invert_cdf(x, t).max(0.0))
        };
        write_band(band, lo, hi)
    })
}

/// Band `[q_lo - F^-1(t | x), q_hi + F^-1(t | x)]` for the CQR score.
#[no_mangle]
pub unsafe extern "C" fn epic_interval_cqr(
    model: *const EpicModel,
    x: *const f64,
    p: usize,
    q_lo: f64,
    q_hi: f64,
    t: f64,
    lo: *mut f64,
    hi: *mut f64,
) -> EpicStatus {
    guard(|| {
        let m = self::model(model)?;
        let x = row(m, x, p)?;
        let band = if t >= 1.0 {
            PredictionBand::full()
        } else {
            let (a, b) = uncross(q_lo, q_hi);
            let r = m.invert_cdf(x, t);
            PredictionBand::new(a - r, b + r)
        };
        write_band(band, lo, hi)
    })
}

/// Band for a Gaussian predictive `N(mu, sigma^2)` of the residual score.
#[no_mangle]
pub unsafe extern "C" fn epic_interval_normal(
    g: f64,
    mu: f64,
    sigma: f64,
    t: f64,
    lo: *mut f64,
    hi: *mut f64,
) -> EpicStatus {
    guard(|| write_band(epic_interval_normal_closed_form(g, mu, sigma, t)?, lo, hi))
}

/// Label set `{y : s'(y) <= t}` where `s'(y)` sums `predictive` over labels whose
/// base probability is at least `base[y]`. `in_set` receives 0/1 flags,
/// `s_prime` (optional, may be NULL) the transformed scores, and `set_size` the count.
#[no_mangle]
pub unsafe extern "C" fn epic_class_set(
    predictive: *const f64,
    base: *const f64,
    k: usize,
    t: f64,
    in_set: *mut u8,
    s_prime: *mut f64,
    set_size: *mut usize,
) -> EpicStatus {
    guard(|| {
        if k == 0 {
            return Err(invalid("k must be >= 1"));
        }
        let pred = slice_in(predictive, k, "predictive")?;
        let base = slice_in(base, k, "base")?;
        epicscore::scores::check_probs(pred)?;
        epicscore::scores::check_probs(base)?;
        let neg: Vec<f64> = base.iter().map(|p| -p).collect();
        let sp = class_s_prime(pred, &neg)?;
        let flags = slice_out(in_set, k, "in_set")?;
        let mut count = 0;
        for (f, v) in flags.iter_mut().zip(&sp) {
            *f = u8::from(*v <= t);
            count += usize::from(*v <= t);
        }
        if !s_prime.is_null() {
            slice_out(s_prime, k, "s_prime")?.copy_from_slice(&sp);
        }
        write(set_size, count, "set_size")
    })
}

fn bands(lo: &[f64], hi: &[f64]) -> Vec<PredictionBand> {
    lo.iter()
        .zip(hi)
        .map(|(&l, &h)| if l == f64::NEG_INFINITY && h == f64::INFINITY { PredictionBand::full() } else { PredictionBand::new(l, h) })
        .collect()
}

/// Mean interval score over `n` bands.
#[no_mangle]
pub unsafe extern "C" fn epic_aisl(
    lo: *const f64,
    hi: *const f64,
    y: *const f64,
    n: usize,
    alpha: f64,
    out: *mut f64,
) -> EpicStatus {
    guard(|| {
        if n == 0 {
            return Err(invalid("n must be >= 1"));
        }
        let (lo, hi, y) = (slice_in(lo, n, "lo")?, slice_in(hi, n, "hi")?, slice_in(y, n, "y")?);
        write(out, aisl(&bands(lo, hi), y, NominalLevel::new(alpha)?)?, "out")
    })
}

/// Fraction of `y` inside `[lo, hi]`.
#[no_mangle]
pub unsafe extern "C" fn epic_marginal_coverage(
    lo: *const f64,
    hi: *const f64,
    y: *const f64,
    n: usize,
    out: *mut f64,
) -> EpicStatus {
    guard(|| {
        let (lo, hi, y) = (slice_in(lo, n, "lo")?, slice_in(hi, n, "hi")?, slice_in(y, n, "y")?);
        write(out, marginal_coverage(&bands(lo, hi), y)?, "out")
    })
}
