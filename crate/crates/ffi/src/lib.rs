//! C ABI for `optidesign`.
//!
//! Objects are opaque handles created by `od_*_new`/`od_*_from_*` functions
//! and released with the matching `od_*_free`. Every fallible function
//! returns an [`OdStatus`]; on failure the message is available from
//! [`od_last_error_message`] on the same thread. Matrices cross the
//! boundary row-major. Output buffers are caller-allocated with their
//! capacity passed alongside; a short buffer yields
//! `OD_STATUS_BUFFER_TOO_SMALL` and the required length in `*len_out`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use optidesign::criteria::{self, CriterionKind, EfficiencyMode};
use optidesign::linalg;
use optidesign::nls::{self, FitResult};
use optidesign::search::{self, DesignOptions, DesignOutcome};
use optidesign::sensitivity::{self, ResidualMode};
use optidesign::{zoo, Dataset, DesignRegion, Error, ModelSpec};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Singular = 4,
    NotConverged = 5,
    UnknownModel = 6,
    Fixture = 7,
    Io = 8,
    Parse = 9,
    Evaluation = 10,
    SimulationAborted = 11,
    Unsupported = 12,
    BufferTooSmall = 13,
    Panic = 99,
}

/// Design criterion selector for `criterion` arguments.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdCriterion {
    D = 0,
    Dp = 1,
}

/// Residual handling selector for `residual_mode` arguments.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdResidualMode {
    Observed = 0,
    Zero = 1,
}

/// Efficiency interpretation selector for `mode` arguments.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdEfficiencyMode {
    Literal = 0,
    SameMatrix = 1,
}

/// Opaque regression model.
pub struct OdModel(ModelSpec);
/// Opaque dataset (design rows with optional responses).
pub struct OdDataset(Dataset);
/// Opaque least-squares fit.
pub struct OdFit(FitResult);
/// Opaque design search outcome.
pub struct OdDesign(DesignOutcome);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> OdStatus {
    match err {
        Error::Dimension { .. } => OdStatus::Dimension,
        Error::Argument(_) => OdStatus::InvalidArgument,
        Error::Evaluation { .. } => OdStatus::Evaluation,
        Error::AtRow { source, .. } => status_of(source),
        Error::Singular { .. } => OdStatus::Singular,
        Error::NotConverged { .. } => OdStatus::NotConverged,
        Error::Unsupported(_) => OdStatus::Unsupported,
        Error::FixtureMissing { .. } | Error::FixtureIntegrity { .. } => OdStatus::Fixture,
        Error::UnknownModel(_) => OdStatus::UnknownModel,
        Error::SimulationAborted { .. } => OdStatus::SimulationAborted,
        Error::Parse { .. } => OdStatus::Parse,
        Error::Io { .. } => OdStatus::Io,
    }
}

/// Failure inside the wrapper before or after the library call.
struct Fail(OdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

type Outcome = std::result::Result<(), Fail>;

fn guard(f: impl FnOnce() -> Outcome) -> OdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            clear_error();
            OdStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            OdStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(OdStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(OdStatus::InvalidArgument, msg.into())
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> std::result::Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> std::result::Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> std::result::Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &str) -> Outcome {
    if out.is_null() {
        return Err(null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write_scalar<T>(out: *mut T, value: T, what: &str) -> Outcome {
    if out.is_null() {
        return Err(null(what));
    }
    *out = value;
    Ok(())
}

/// Copies `values` into `out[..cap]`, always reporting the needed length.
unsafe fn write_buffer(values: &[f64], out: *mut f64, cap: usize, len_out: *mut usize) -> Outcome {
    if !len_out.is_null() {
        *len_out = values.len();
    }
    if cap < values.len() {
        return Err(Fail(
            OdStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {} needed", values.len()),
        ));
    }
    if !values.is_empty() {
        if out.is_null() {
            return Err(null("output buffer"));
        }
        std::ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    }
    Ok(())
}

fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn criterion_kind(c: OdCriterion) -> CriterionKind {
    match c {
        OdCriterion::D => CriterionKind::D,
        OdCriterion::Dp => CriterionKind::Dp,
    }
}

fn criterion_from(raw: i32) -> std::result::Result<CriterionKind, Fail> {
    match raw {
        0 => Ok(criterion_kind(OdCriterion::D)),
        1 => Ok(criterion_kind(OdCriterion::Dp)),
        _ => Err(invalid(format!("criterion {raw}: expected OD_CRITERION_D or OD_CRITERION_DP"))),
    }
}

fn residual_mode_from(raw: i32) -> std::result::Result<ResidualMode, Fail> {
    match raw {
        x if x == OdResidualMode::Observed as i32 => Ok(ResidualMode::Observed),
        x if x == OdResidualMode::Zero as i32 => Ok(ResidualMode::Zero),
        _ => Err(invalid(format!("residual mode {raw}"))),
    }
}

fn efficiency_mode_from(raw: i32) -> std::result::Result<EfficiencyMode, Fail> {
    match raw {
        x if x == OdEfficiencyMode::Literal as i32 => Ok(EfficiencyMode::Literal),
        x if x == OdEfficiencyMode::SameMatrix as i32 => Ok(EfficiencyMode::SameMatrix),
        _ => Err(invalid(format!("efficiency mode {raw}"))),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn od_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes (without the terminator) of the calling thread's last
/// error message; 0 when the last call succeeded.
#[no_mangle]
pub extern "C" fn od_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes().len()))
}

/// Copies the last error message, NUL-terminated and truncated to `cap`
/// bytes. Returns the number of bytes written excluding the terminator.
///
/// # Safety
/// `buf` must be valid for `cap` bytes or null when `cap` is 0.
#[no_mangle]
pub unsafe extern "C" fn od_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    if buf.is_null() || cap == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |c| c.as_bytes());
        let n = bytes.len().min(cap - 1);
        std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
        *buf.add(n) = 0;
        n
    })
}

/// Looks up a zoo model: `"michaelis-menten"` or `"hougen-watson"`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn od_model_from_zoo(name: *const c_char, out: *mut *mut OdModel) -> OdStatus {
    guard(|| {
        let name = string(name, "name")?;
        put(out, OdModel(zoo::lookup_model(name)?), "out")
    })
}

/// # Safety
/// `model` must come from `od_model_from_zoo` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn od_model_free(model: *mut OdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn od_model_n_params(model: *const OdModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.n_params())
}

/// Number of design variables, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn od_model_n_vars(model: *const OdModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.n_vars())
}

/// Mean response at one design point.
///
/// # Safety
/// `x` holds `n_vars` values, `theta` holds `n_params`.
#[no_mangle]
pub unsafe extern "C" fn od_model_eval(model: *const OdModel, x: *const f64, theta: *const f64, out: *mut f64) -> OdStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        let x = slice(x, m.n_vars(), "x")?;
        let theta = slice(theta, m.n_params(), "theta")?;
        write_scalar(out, m.eval(x, theta)?, "out")
    })
}

/// Dataset from `n` rows of `m` design variables (row-major `x`) and
/// optional responses `y` (null for a design without responses).
///
/// # Safety
/// `x` holds `n * m` values; `y` holds `n` values or is null.
#[no_mangle]
pub unsafe extern "C" fn od_dataset_new(
    n: usize,
    m: usize,
    x: *const f64,
    y: *const f64,
    out: *mut *mut OdDataset,
) -> OdStatus {
    guard(|| {
        let total = n.checked_mul(m).ok_or_else(|| invalid("n * m overflows"))?;
        let x = slice(x, total, "x")?.to_vec();
        let y = if y.is_null() { None } else { Some(slice(y, n, "y")?.to_vec()) };
        put(out, OdDataset(Dataset::from_flat(m, x, y)?), "out")
    })
}

/// Reads a CSV with header `x1,...,xm[,y]`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn od_dataset_from_csv(path: *const c_char, out: *mut *mut OdDataset) -> OdStatus {
    guard(|| {
        let path = string(path, "path")?;
        put(out, OdDataset(Dataset::from_csv_path(Path::new(path))?), "out")
    })
}

/// # Safety
/// `data` must come from an `od_dataset_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn od_dataset_free(data: *mut OdDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `data` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn od_dataset_n(data: *const OdDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.n())
}

/// Least-squares fit from `theta0` (`n_params` values).
///
/// # Safety
/// Handles must be live; `theta0` holds `n_params` values.
#[no_mangle]
pub unsafe extern "C" fn od_fit(
    model: *const OdModel,
    data: *const OdDataset,
    theta0: *const f64,
    out: *mut *mut OdFit,
) -> OdStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        let d = &borrow(data, "data")?.0;
        let theta0 = slice(theta0, m.n_params(), "theta0")?;
        put(out, OdFit(nls::fit_ls(m, d, theta0)?), "out")
    })
}

/// # Safety
/// `fit` must come from `od_fit` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn od_fit_free(fit: *mut OdFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Parameter estimates.
///
/// # Safety
/// `out` valid for `cap` doubles; `len_out` valid or null.
#[no_mangle]
pub unsafe extern "C" fn od_fit_estimates(fit: *const OdFit, out: *mut f64, cap: usize, len_out: *mut usize) -> OdStatus {
    guard(|| write_buffer(&borrow(fit, "fit")?.0.theta_hat, out, cap, len_out))
}

/// Linear-approximation standard errors; `OD_STATUS_SINGULAR` when the
/// information matrix is singular at the estimate.
///
/// # Safety
/// As [`od_fit_estimates`].
#[no_mangle]
pub unsafe extern "C" fn od_fit_std_errors(fit: *const OdFit, out: *mut f64, cap: usize, len_out: *mut usize) -> OdStatus {
    guard(|| {
        let fit = &borrow(fit, "fit")?.0;
        let se = fit.std_errors().ok_or_else(|| Fail(OdStatus::Singular, "covariance unavailable: V'V is singular".into()))?;
        write_buffer(se, out, cap, len_out)
    })
}

/// Full k x k correlation matrix, row-major.
///
/// # Safety
/// As [`od_fit_estimates`].
#[no_mangle]
pub unsafe extern "C" fn od_fit_correlation(fit: *const OdFit, out: *mut f64, cap: usize, len_out: *mut usize) -> OdStatus {
    guard(|| {
        let fit = &borrow(fit, "fit")?.0;
        let p = fit
            .precision
            .as_ref()
            .ok_or_else(|| Fail(OdStatus::Singular, "covariance unavailable: V'V is singular".into()))?;
        write_buffer(&row_major(&p.correlation), out, cap, len_out)
    })
}

/// Residual sum of squares.
///
/// # Safety
/// `fit` live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn od_fit_sse(fit: *const OdFit, out: *mut f64) -> OdStatus {
    guard(|| write_scalar(out, borrow(fit, "fit")?.0.sse, "out"))
}

/// Local sensitivities V (n x k, row-major) at `theta`.
///
/// # Safety
/// Handles live; `theta` holds `n_params` values; `out` valid for `cap`.
#[no_mangle]
pub unsafe extern "C" fn od_jacobian(
    model: *const OdModel,
    data: *const OdDataset,
    theta: *const f64,
    out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> OdStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        let d = &borrow(data, "data")?.0;
        let theta = slice(theta, m.n_params(), "theta")?;
        write_buffer(&row_major(&m.jacobian(d, theta)?), out, cap, len_out)
    })
}

/// Profile-based sensitivities P (n x k, row-major) at `theta`.
/// `residual_mode` is an [`OdResidualMode`] value.
///
/// # Safety
/// As [`od_jacobian`].
#[no_mangle]
pub unsafe extern "C" fn od_profile_matrix(
    model: *const OdModel,
    data: *const OdDataset,
    theta: *const f64,
    residual_mode: i32,
    out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> OdStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        let d = &borrow(data, "data")?.0;
        let theta = slice(theta, m.n_params(), "theta")?;
        let mode = residual_mode_from(residual_mode)?;
        let bundle = sensitivity::profile_matrix(m, d, theta, mode)?;
        write_buffer(&row_major(&bundle.p), out, cap, len_out)
    })
}

/// `ln det(V'V)` (D) or `ln det(P'P)` (D_P, zero residuals) of the design
/// in `data` at `theta`; `-inf` when singular.
///
/// # Safety
/// Handles live; `theta` holds `n_params` values; `logdet` valid.
#[no_mangle]
pub unsafe extern "C" fn od_criterion(
    model: *const OdModel,
    data: *const OdDataset,
    theta: *const f64,
    criterion: i32,
    logdet: *mut f64,
) -> OdStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        let d = &borrow(data, "data")?.0;
        let theta = slice(theta, m.n_params(), "theta")?;
        let value = match criterion_from(criterion)? {
            CriterionKind::D => linalg::log_det_gram(&m.jacobian(d, theta)?),
            CriterionKind::Dp => {
                linalg::log_det_gram(&sensitivity::profile_matrix(m, d, theta, ResidualMode::Zero)?.p)
            }
        };
        write_scalar(logdet, value, "logdet")
    })
}

unsafe fn region_from(m: &ModelSpec, lower: *const f64, upper: *const f64) -> std::result::Result<DesignRegion, Fail> {
    if lower.is_null() && upper.is_null() {
        return m
            .bounds()
            .cloned()
            .ok_or_else(|| invalid("model has no default region; pass bounds"));
    }
    let lo = slice(lower, m.n_vars(), "lower")?.to_vec();
    let hi = slice(upper, m.n_vars(), "upper")?.to_vec();
    Ok(DesignRegion::new(lo, hi)?)
}

fn options(grid_points: usize) -> DesignOptions {
    DesignOptions {
        grid_points: if grid_points == 0 { DesignOptions::default().grid_points } else { grid_points },
        ..DesignOptions::default()
    }
}

/// Initial `n_support`-point design at `theta0` (zero residuals).
/// Null `lower`/`upper` select the model's default region; `grid_points`
/// 0 selects the default resolution.
///
/// # Safety
/// `model` live; `theta0` holds `n_params` values; bounds hold `n_vars`
/// values each or are both null; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn od_design_initial(
    model: *const OdModel,
    theta0: *const f64,
    n_support: usize,
    lower: *const f64,
    upper: *const f64,
    criterion: i32,
    grid_points: usize,
    out: *mut *mut OdDesign,
) -> OdStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        let theta0 = slice(theta0, m.n_params(), "theta0")?;
        let region = region_from(m, lower, upper)?;
        let kind = criterion_from(criterion)?;
        let outcome = search::design_initial(m, theta0, n_support, &region, kind, &options(grid_points))?;
        put(out, OdDesign(outcome), "out")
    })
}

/// Best additional point for the runs in `data` given their fit.
///
/// # Safety
/// As [`od_design_initial`], with `data` and `fit` live handles.
#[no_mangle]
pub unsafe extern "C" fn od_design_sequential(
    model: *const OdModel,
    data: *const OdDataset,
    fit: *const OdFit,
    lower: *const f64,
    upper: *const f64,
    criterion: i32,
    grid_points: usize,
    out: *mut *mut OdDesign,
) -> OdStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0;
        let d = &borrow(data, "data")?.0;
        let f = &borrow(fit, "fit")?.0;
        let region = region_from(m, lower, upper)?;
        let kind = criterion_from(criterion)?;
        let outcome = search::design_sequential(m, f, d, &region, kind, &options(grid_points))?;
        put(out, OdDesign(outcome), "out")
    })
}

/// # Safety
/// `design` must come from an `od_design_*` function and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn od_design_free(design: *mut OdDesign) {
    if !design.is_null() {
        drop(Box::from_raw(design));
    }
}

/// Number of support points (1 for sequential designs), 0 for null.
///
/// # Safety
/// `design` live or null.
#[no_mangle]
pub unsafe extern "C" fn od_design_n_points(design: *const OdDesign) -> usize {
    design.as_ref().map_or(0, |d| d.0.support_points.len())
}

/// Support points, row-major (`n_points x n_vars`).
///
/// # Safety
/// As [`od_fit_estimates`].
#[no_mangle]
pub unsafe extern "C" fn od_design_points(design: *const OdDesign, out: *mut f64, cap: usize, len_out: *mut usize) -> OdStatus {
    guard(|| {
        let d = &borrow(design, "design")?.0;
        let flat: Vec<f64> = d.support_points.iter().flatten().copied().collect();
        write_buffer(&flat, out, cap, len_out)
    })
}

/// Criterion log-determinant at the returned design.
///
/// # Safety
/// `design` live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn od_design_logdet(design: *const OdDesign, out: *mut f64) -> OdStatus {
    guard(|| write_scalar(out, borrow(design, "design")?.0.criterion.logdet, "out"))
}

/// Full outcome as JSON, NUL-terminated. `*len_out` receives the length
/// without the terminator; `cap` must exceed it.
///
/// # Safety
/// `buf` valid for `cap` bytes; `len_out` valid or null.
#[no_mangle]
pub unsafe extern "C" fn od_design_to_json(design: *const OdDesign, buf: *mut c_char, cap: usize, len_out: *mut usize) -> OdStatus {
    guard(|| {
        let d = &borrow(design, "design")?.0;
        let json = optidesign::io::to_json_string(d)?;
        if !len_out.is_null() {
            *len_out = json.len();
        }
        if cap <= json.len() {
            return Err(Fail(OdStatus::BufferTooSmall, format!("JSON needs {} bytes plus terminator", json.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::ptr::copy_nonoverlapping(json.as_ptr().cast(), buf, json.len());
        *buf.add(json.len()) = 0;
        Ok(())
    })
}

/// `exp((numerator - denominator) / k) * 100`. `mode` is an
/// [`OdEfficiencyMode`] value, recorded for interpretation only.
///
/// # Safety
/// `out` valid.
#[no_mangle]
pub unsafe extern "C" fn od_d_efficiency(
    numerator_logdet: f64,
    denominator_logdet: f64,
    k: usize,
    mode: i32,
    out: *mut f64,
) -> OdStatus {
    guard(|| {
        let mode = efficiency_mode_from(mode)?;
        let report = criteria::d_efficiency(numerator_logdet, denominator_logdet, k, mode)?;
        write_scalar(out, report.d_eff, "out")
    })
}
