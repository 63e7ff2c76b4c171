//! C ABI for shiftscan.
//!
//! Every fallible call returns an [`SsStatus`]; on failure a message for the
//! calling thread is available from [`ss_last_error_message`]. Filter banks
//! and embedding models are opaque handles released with their `_free`
//! function. Matrices are dense row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use shiftscan::embedding::{fit_embedding, project, EmbeddingModel};
use shiftscan::eval::{metrics_report, metrics_with_abstention, PredictionRecord, Rate};
use shiftscan::mmd::{btest, Gamma, KernelConfig};
use shiftscan::scattering::{Boundary, FilterBank, Scatterer, ScatteringConfig};
use shiftscan::{Error, FeatureMatrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    InsufficientData = 4,
    Io = 5,
    Parse = 6,
    Panic = 7,
    Other = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> SsStatus {
    match err {
        Error::InvalidConfig(_) | Error::CapExceeded { .. } => SsStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => SsStatus::DimensionMismatch,
        Error::InsufficientData(_) => SsStatus::InsufficientData,
        Error::Io { .. } => SsStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::Image { .. } => SsStatus::Parse,
        _ => SsStatus::Other,
    }
}

fn guard(f: impl FnOnce() -> Result<(), SsStatus>) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SsStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            SsStatus::Panic
        }
    }
}

fn fail(err: Error) -> SsStatus {
    set_error(err.to_string());
    status_of(&err)
}

fn null(what: &str) -> SsStatus {
    set_error(format!("{what} is null"));
    SsStatus::NullPointer
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], SsStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], SsStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn matrix(
    p: *const f64,
    rows: usize,
    cols: usize,
    what: &str,
) -> Result<FeatureMatrix, SsStatus> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| fail(Error::InvalidConfig(format!("{what}: size overflow"))))?;
    let data = input(p, len, what)?;
    FeatureMatrix::new(rows, cols, data.to_vec()).map_err(fail)
}

/// Message describing the last failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ss_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Number of scattering coefficients for `scales` (J), `orientations` (L)
/// and `max_order`.
///
/// # Safety
/// `out` must point to writable storage for one `size_t`.
#[no_mangle]
pub unsafe extern "C" fn ss_feature_count(
    scales: usize,
    orientations: usize,
    max_order: usize,
    out: *mut usize,
) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out =
            shiftscan::scattering::feature_count(scales, orientations, max_order).map_err(fail)?;
        Ok(())
    })
}

/// Opaque scattering filter bank.
pub struct SsFilterBank(FilterBank);

/// Builds a filter bank for `side × side` images. Nonzero `reflect` selects
/// mirror padding instead of periodic boundaries.
///
/// # Safety
/// `out` must point to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_filter_bank_new(
    scales: usize,
    orientations: usize,
    max_order: usize,
    side: usize,
    reflect: i32,
    out: *mut *mut SsFilterBank,
) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let boundary = if reflect != 0 {
            Boundary::Reflect
        } else {
            Boundary::Periodic
        };
        let cfg = ScatteringConfig::new(scales, orientations, max_order, side)
            .map_err(fail)?
            .with_boundary(boundary);
        let bank = FilterBank::new(cfg).map_err(fail)?;
        *out = Box::into_raw(Box::new(SsFilterBank(bank)));
        Ok(())
    })
}

/// # Safety
/// `bank` must be NULL or a handle from [`ss_filter_bank_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_filter_bank_free(bank: *mut SsFilterBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Coefficients per image for this bank, or 0 for a NULL handle.
///
/// # Safety
/// `bank` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_filter_bank_feature_count(bank: *const SsFilterBank) -> usize {
    bank.as_ref().map_or(0, |b| b.0.config().feature_count())
}

/// Scatters one `side × side` image with pixel values in `[0, 255]`,
/// writing `ss_filter_bank_feature_count(bank)` coefficients to `out`.
///
/// # Safety
/// `pixels` must hold `side * side` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ss_scatter(
    bank: *const SsFilterBank,
    pixels: *const f64,
    side: usize,
    out: *mut f64,
    out_len: usize,
) -> SsStatus {
    guard(|| {
        let bank = bank.as_ref().ok_or_else(|| null("bank"))?;
        let n = bank.0.config().feature_count();
        if out_len != n {
            return Err(fail(Error::DimensionMismatch {
                expected: n,
                actual: out_len,
            }));
        }
        let px = input(pixels, side.saturating_mul(side), "pixels")?;
        let dst = output(out, out_len, "out")?;
        let features = Scatterer::new(&bank.0)
            .transform_pixels(side, px)
            .map_err(fail)?;
        dst.copy_from_slice(&features.values);
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SsBTestResult {
    pub statistic: f64,
    pub z: f64,
    pub p_value: f64,
    pub p_value_underflow: bool,
    pub block_size: usize,
    pub blocks: usize,
    pub reject: bool,
    /// Kernel scale actually used.
    pub gamma: f64,
}

/// Block-MMD two-sample test between `x` (`nx × dim`) and `y` (`ny × dim`).
/// `gamma <= 0` selects the median heuristic; `block_size == 0` selects
/// `round(sqrt(n))`.
///
/// # Safety
/// `x` and `y` must hold `nx * dim` and `ny * dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_btest(
    x: *const f64,
    nx: usize,
    y: *const f64,
    ny: usize,
    dim: usize,
    gamma: f64,
    standardize: bool,
    alpha: f64,
    block_size: usize,
    seed: u64,
    out: *mut SsBTestResult,
) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let xm = matrix(x, nx, dim, "x")?;
        let ym = matrix(y, ny, dim, "y")?;
        let cfg = KernelConfig {
            gamma: if gamma > 0.0 {
                Gamma::Fixed(gamma)
            } else {
                Gamma::MedianHeuristic
            },
            standardize,
        };
        let r = btest(
            &xm,
            &ym,
            &cfg,
            alpha,
            (block_size > 0).then_some(block_size),
            seed,
        )
        .map_err(fail)?;
        *out = SsBTestResult {
            statistic: r.statistic,
            z: r.z,
            p_value: r.p_value,
            p_value_underflow: r.p_value_underflow,
            block_size: r.block_size,
            blocks: r.blocks,
            reject: r.reject,
            gamma: r.gamma,
        };
        Ok(())
    })
}

/// Opaque fitted 2D embedding.
pub struct SsEmbedding(EmbeddingModel);

/// Fits the whitened two-component embedding on `rows × cols` features.
///
/// # Safety
/// `data` must hold `rows * cols` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_embedding_fit(
    data: *const f64,
    rows: usize,
    cols: usize,
    out: *mut *mut SsEmbedding,
) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = matrix(data, rows, cols, "data")?;
        let model = fit_embedding(&m).map_err(fail)?;
        *out = Box::into_raw(Box::new(SsEmbedding(model)));
        Ok(())
    })
}

/// Loads a model JSON as written by the `embed` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_embedding_load(
    path: *const c_char,
    out: *mut *mut SsEmbedding,
) -> SsStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(Error::InvalidConfig("path is not UTF-8".into())))?;
        let text = std::fs::read_to_string(path).map_err(|e| {
            fail(Error::Io {
                path: Path::new(path).to_path_buf(),
                source: e,
            })
        })?;
        let mut doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| fail(e.into()))?;
        let body = doc
            .get_mut("model")
            .map(serde_json::Value::take)
            .unwrap_or(doc);
        let model: EmbeddingModel = serde_json::from_value(body).map_err(|e| fail(e.into()))?;
        *out = Box::into_raw(Box::new(SsEmbedding(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a live handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_embedding_free(model: *mut SsEmbedding) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Projects `rows × cols` features, writing `2 * rows` coordinates
/// (x0, y0, x1, y1, ...) to `out`.
///
/// # Safety
/// `data` must hold `rows * cols` doubles and `out` `2 * rows` doubles.
#[no_mangle]
pub unsafe extern "C" fn ss_embedding_project(
    model: *const SsEmbedding,
    data: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> SsStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let m = matrix(data, rows, cols, "data")?;
        let coords = project(&model.0, &m).map_err(fail)?;
        let dst = output(out, 2 * rows, "out")?;
        for (d, p) in dst.chunks_exact_mut(2).zip(coords) {
            d.copy_from_slice(&p);
        }
        Ok(())
    })
}

/// A metric value; `defined` is false when its denominator was zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SsRate {
    pub value: f64,
    pub defined: bool,
}

impl From<Rate> for SsRate {
    fn from(r: Rate) -> Self {
        match r.value() {
            Some(value) => Self {
                value,
                defined: true,
            },
            None => Self {
                value: 0.0,
                defined: false,
            },
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SsMetrics {
    pub auc: SsRate,
    pub accuracy: SsRate,
    pub precision: SsRate,
    pub sensitivity: SsRate,
    pub specificity: SsRate,
    pub ppv: SsRate,
    pub npv: SsRate,
    /// Records evaluated after abstention.
    pub n: usize,
    pub threshold: f64,
    pub abstention_fraction: f64,
}

/// Threshold metrics and AUC for `n` scores in `[0, 1]` with 0/1 labels,
/// keeping the `keep_fraction` most confident predictions (1 keeps all).
/// Confidence ties are broken by input position.
///
/// # Safety
/// `scores` and `labels` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ss_metrics(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    threshold: f64,
    keep_fraction: f64,
    out: *mut SsMetrics,
) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = input(scores, n, "scores")?;
        let l = input(labels, n, "labels")?;
        let preds = s
            .iter()
            .zip(l)
            .enumerate()
            .map(|(i, (&p, &y))| PredictionRecord::new(format!("{i:020}"), p, y))
            .collect::<Result<Vec<_>, _>>()
            .map_err(fail)?;
        let r = if keep_fraction == 1.0 {
            metrics_report(&preds, threshold)
        } else {
            metrics_with_abstention(&preds, threshold, keep_fraction)
        }
        .map_err(fail)?;
        *out = SsMetrics {
            auc: r.auc.into(),
            accuracy: r.accuracy.into(),
            precision: r.precision.into(),
            sensitivity: r.sensitivity.into(),
            specificity: r.specificity.into(),
            ppv: r.ppv.into(),
            npv: r.npv.into(),
            n: r.n,
            threshold: r.threshold,
            abstention_fraction: r.abstention_fraction,
        };
        Ok(())
    })
}
