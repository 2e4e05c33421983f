//! C ABI over the nonunion toolkit.
//!
//! Conventions:
//! - every function returns a [`NuStatus`]; results go through out-pointers;
//! - on failure a message is kept per thread and read with [`nu_last_error`];
//! - datasets and models are opaque handles released with their `_free` function;
//! - labels are passed as bytes, non-zero meaning positive;
//! - undefined metric values (0/0) are reported as NaN.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use nonunion::calibration::{calibration_odds_ratio, lowess};
use nonunion::cohort::{generate_synthetic_cohort, load_dataset, Dataset, FeatureSchema, SyntheticConfig};
use nonunion::compare::{wilcoxon_signed_rank, PValueMethod};
use nonunion::experiments::{resolve_models, Seeds};
use nonunion::metrics::{
    companion_metrics, confusion, min_threshold_for_sensitivity, min_threshold_for_specificity, upm,
    ConfusionMatrix,
};
use nonunion::models::{ModelArtifact, ModelConfigs, ModelKind};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Bad argument or configuration (invalid UTF-8, out-of-range value, bad JSON).
    InvalidArgument = 2,
    /// The data cannot support the request (I/O, parsing, single class, ...).
    DataError = 3,
    /// Numerical failure while training or computing.
    NumericalError = 4,
    /// The requested quantity is undefined (0/0); the output is set to NaN.
    Undefined = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuModelKind {
    Logistic = 0,
    Svm = 1,
    Gbt = 2,
    Constant = 3,
}

impl From<NuModelKind> for ModelKind {
    fn from(kind: NuModelKind) -> Self {
        match kind {
            NuModelKind::Logistic => ModelKind::Logistic,
            NuModelKind::Svm => ModelKind::Svm,
            NuModelKind::Gbt => ModelKind::Gbt,
            NuModelKind::Constant => ModelKind::Constant,
        }
    }
}

impl From<ModelKind> for NuModelKind {
    fn from(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Logistic => NuModelKind::Logistic,
            ModelKind::Svm => NuModelKind::Svm,
            ModelKind::Gbt => NuModelKind::Gbt,
            ModelKind::Constant => NuModelKind::Constant,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuConfusion {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
    pub threshold: f64,
}

impl From<ConfusionMatrix> for NuConfusion {
    fn from(cm: ConfusionMatrix) -> Self {
        Self { true_pos: cm.tp, false_pos: cm.fp, true_neg: cm.tn, false_neg: cm.fn_, threshold: cm.threshold }
    }
}

impl From<NuConfusion> for ConfusionMatrix {
    fn from(cm: NuConfusion) -> Self {
        ConfusionMatrix { tp: cm.true_pos, fp: cm.false_pos, tn: cm.true_neg, fn_: cm.false_neg, threshold: cm.threshold }
    }
}

/// Metrics of a confusion matrix; NaN marks an undefined value.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuMetrics {
    pub upm: f64,
    pub mcc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub npv: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuWilcoxon {
    pub n_pairs: usize,
    pub n_nonzero: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    pub z: f64,
    pub p_value: f64,
    /// NaN when the exact distribution was not computed.
    pub p_exact: f64,
    pub effect_size: f64,
    /// True when `p_value` is the exact p-value.
    pub exact: bool,
}

/// Opaque cohort handle.
pub struct NuDataset {
    inner: Dataset,
}

/// Opaque trained-model handle.
pub struct NuModel {
    inner: ModelArtifact,
}

struct Failure {
    status: NuStatus,
    message: String,
}

impl Failure {
    fn new(status: NuStatus, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

fn fail<E: Into<nonunion::Error>>(err: E) -> Failure {
    let err: nonunion::Error = err.into();
    let status = match err.exit_code() {
        1 => NuStatus::InvalidArgument,
        3 => NuStatus::NumericalError,
        _ => NuStatus::DataError,
    };
    Failure::new(status, err.to_string())
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<NuStatus, Failure>) -> NuStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {message}"));
            NuStatus::Internal
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure::new(NuStatus::NullPointer, format!("`{what}` is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(Failure::new(NuStatus::NullPointer, format!("`{what}` is null")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn labels(ptr: *const u8, len: usize) -> Result<Vec<bool>, Failure> {
    Ok(slice(ptr, len, "labels")?.iter().map(|&b| b != 0).collect())
}

unsafe fn reference<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| Failure::new(NuStatus::NullPointer, format!("`{what}` is null")))
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(NuStatus::NullPointer, "output pointer is null"));
    }
    out.write(value);
    Ok(())
}

unsafe fn string(ptr: *const c_char, what: &str) -> Result<String, Failure> {
    if ptr.is_null() {
        return Err(Failure::new(NuStatus::NullPointer, format!("`{what}` is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::new(NuStatus::InvalidArgument, format!("`{what}` is not valid UTF-8")))
}

fn nan_if_none(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn nu_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nu_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generate a synthetic cohort of `n` patients with the default generator.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn nu_dataset_synthetic(n: usize, seed: u64, out: *mut *mut NuDataset) -> NuStatus {
    guard(|| {
        let (inner, _) = generate_synthetic_cohort(n, seed, &SyntheticConfig::default()).map_err(fail)?;
        write(out, Box::into_raw(Box::new(NuDataset { inner })))?;
        Ok(NuStatus::Ok)
    })
}

/// Load a cohort CSV described by a schema JSON file.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn nu_dataset_load_csv(
    csv_path: *const c_char,
    schema_path: *const c_char,
    out: *mut *mut NuDataset,
) -> NuStatus {
    guard(|| {
        let csv = PathBuf::from(string(csv_path, "csv_path")?);
        let schema = FeatureSchema::from_json_file(&PathBuf::from(string(schema_path, "schema_path")?)).map_err(fail)?;
        let inner = load_dataset(&csv, &schema).map_err(fail)?;
        write(out, Box::into_raw(Box::new(NuDataset { inner })))?;
        Ok(NuStatus::Ok)
    })
}

/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nu_dataset_rows(dataset: *const NuDataset, out: *mut usize) -> NuStatus {
    guard(|| {
        let ds = reference(dataset, "dataset")?;
        write(out, ds.inner.len())?;
        Ok(NuStatus::Ok)
    })
}

/// Copy the outcome labels (1 = failed healing) into `out[0..len]`; `len` must
/// equal the row count.
///
/// # Safety
/// `dataset` must be a live handle; `out` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn nu_dataset_outcomes(dataset: *const NuDataset, out: *mut u8, len: usize) -> NuStatus {
    guard(|| {
        let ds = reference(dataset, "dataset")?;
        if len != ds.inner.len() {
            return Err(Failure::new(NuStatus::InvalidArgument, format!("buffer holds {len} values, dataset has {} rows", ds.inner.len())));
        }
        let buf = slice_mut(out, len, "out")?;
        for (b, &y) in buf.iter_mut().zip(ds.inner.outcomes()) {
            *b = u8::from(y);
        }
        Ok(NuStatus::Ok)
    })
}

/// Release a dataset handle. Null is ignored.
///
/// # Safety
/// `dataset` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn nu_dataset_free(dataset: *mut NuDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Fit the preprocessing and a classifier of `kind` on `dataset`.
///
/// `config_json` holds model hyperparameters (the `models` section of an
/// experiment config) or is null for defaults. `seed` is the master seed the
/// SVM calibration folds are derived from.
///
/// # Safety
/// `dataset` must be a live handle, `config_json` null or NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nu_model_train(
    dataset: *const NuDataset,
    kind: NuModelKind,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut NuModel,
) -> NuStatus {
    guard(|| {
        let ds = reference(dataset, "dataset")?;
        let configs: ModelConfigs = if config_json.is_null() {
            ModelConfigs::default()
        } else {
            serde_json::from_str(&string(config_json, "config_json")?)
                .map_err(|e| Failure::new(NuStatus::InvalidArgument, format!("model config: {e}")))?
        };
        let configs = resolve_models(&configs, &Seeds::derive(seed));
        let inner = ModelArtifact::fit(&ds.inner, kind.into(), &configs).map_err(fail)?;
        write(out, Box::into_raw(Box::new(NuModel { inner })))?;
        Ok(NuStatus::Ok)
    })
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nu_model_kind(model: *const NuModel, out: *mut NuModelKind) -> NuStatus {
    guard(|| {
        let m = reference(model, "model")?;
        write(out, m.inner.kind.into())?;
        Ok(NuStatus::Ok)
    })
}

/// Predicted probabilities of failed healing for every row of `dataset`;
/// `len` must equal the row count.
///
/// # Safety
/// Handles must be live; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn nu_model_predict(
    model: *const NuModel,
    dataset: *const NuDataset,
    out: *mut f64,
    len: usize,
) -> NuStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let ds = reference(dataset, "dataset")?;
        if len != ds.inner.len() {
            return Err(Failure::new(NuStatus::InvalidArgument, format!("buffer holds {len} values, dataset has {} rows", ds.inner.len())));
        }
        let p = m.inner.predict_proba(&ds.inner).map_err(fail)?;
        slice_mut(out, len, "out")?.copy_from_slice(&p);
        Ok(NuStatus::Ok)
    })
}

/// Write the model artifact as JSON.
///
/// # Safety
/// `model` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nu_model_save(model: *const NuModel, path: *const c_char) -> NuStatus {
    guard(|| {
        let m = reference(model, "model")?;
        m.inner.save(&PathBuf::from(string(path, "path")?)).map_err(fail)?;
        Ok(NuStatus::Ok)
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nu_model_load(path: *const c_char, out: *mut *mut NuModel) -> NuStatus {
    guard(|| {
        let inner = ModelArtifact::load(&PathBuf::from(string(path, "path")?)).map_err(fail)?;
        write(out, Box::into_raw(Box::new(NuModel { inner })))?;
        Ok(NuStatus::Ok)
    })
}

/// Release a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn nu_model_free(model: *mut NuModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Confusion matrix with the rule "positive iff p > threshold".
///
/// # Safety
/// `labels` and `probs` must hold `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nu_confusion(
    labels: *const u8,
    probs: *const f64,
    n: usize,
    threshold: f64,
    out: *mut NuConfusion,
) -> NuStatus {
    guard(|| {
        let y = self::labels(labels, n)?;
        let p = slice(probs, n, "probs")?;
        let cm = confusion(&y, p, threshold).map_err(fail)?;
        write(out, cm.into())?;
        Ok(NuStatus::Ok)
    })
}

/// UPM of a confusion matrix. Returns `Undefined` (and writes NaN) when its
/// denominator is zero.
///
/// # Safety
/// `cm` must be readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nu_upm(cm: *const NuConfusion, out: *mut f64) -> NuStatus {
    guard(|| {
        let cm: ConfusionMatrix = (*reference(cm, "cm")?).into();
        match upm(&cm).map_err(fail)? {
            Some(v) => {
                write(out, v)?;
                Ok(NuStatus::Ok)
            }
            None => {
                write(out, f64::NAN)?;
                Ok(NuStatus::Undefined)
            }
        }
    })
}

/// UPM and companion metrics; undefined entries are NaN.
///
/// # Safety
/// `cm` must be readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nu_metrics(cm: *const NuConfusion, out: *mut NuMetrics) -> NuStatus {
    guard(|| {
        let cm: ConfusionMatrix = (*reference(cm, "cm")?).into();
        let r = companion_metrics(&cm).map_err(fail)?;
        write(
            out,
            NuMetrics {
                upm: nan_if_none(r.upm),
                mcc: nan_if_none(r.mcc),
                sensitivity: nan_if_none(r.sensitivity),
                specificity: nan_if_none(r.specificity),
                precision: nan_if_none(r.precision),
                npv: nan_if_none(r.npv),
            },
        )?;
        Ok(NuStatus::Ok)
    })
}

/// Two-sided Wilcoxon signed-rank test on paired samples `a` and `b`.
///
/// # Safety
/// `a` and `b` must hold `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nu_wilcoxon(a: *const f64, b: *const f64, n: usize, out: *mut NuWilcoxon) -> NuStatus {
    guard(|| {
        let r = wilcoxon_signed_rank(slice(a, n, "a")?, slice(b, n, "b")?).map_err(fail)?;
        write(
            out,
            NuWilcoxon {
                n_pairs: r.n_pairs,
                n_nonzero: r.n_nonzero,
                w_plus: r.w_plus,
                w_minus: r.w_minus,
                z: r.z,
                p_value: r.p_value,
                p_exact: nan_if_none(r.p_exact),
                effect_size: r.effect_size,
                exact: r.method == PValueMethod::Exact,
            },
        )?;
        Ok(NuStatus::Ok)
    })
}

/// LOWESS smoothing of `y` against `x`, evaluated at every `x`.
///
/// # Safety
/// `x`, `y` and `out` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn nu_lowess(
    x: *const f64,
    y: *const f64,
    n: usize,
    frac: f64,
    robust_iters: usize,
    out: *mut f64,
) -> NuStatus {
    guard(|| {
        let fitted = lowess(slice(x, n, "x")?, slice(y, n, "y")?, frac, robust_iters).map_err(fail)?;
        slice_mut(out, n, "out")?.copy_from_slice(&fitted);
        Ok(NuStatus::Ok)
    })
}

/// Calibration odds ratio: odds of the mean prediction over odds of the
/// observed incidence.
///
/// # Safety
/// `labels` and `probs` must hold `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nu_calibration_odds_ratio(
    labels: *const u8,
    probs: *const f64,
    n: usize,
    out: *mut f64,
) -> NuStatus {
    guard(|| {
        let y = self::labels(labels, n)?;
        let or = calibration_odds_ratio(&y, slice(probs, n, "probs")?).map_err(fail)?;
        write(out, or)?;
        Ok(NuStatus::Ok)
    })
}

/// Largest threshold whose sensitivity still reaches `floor`.
///
/// # Safety
/// `labels` and `probs` must hold `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nu_threshold_for_sensitivity(
    labels: *const u8,
    probs: *const f64,
    n: usize,
    floor: f64,
    out: *mut f64,
) -> NuStatus {
    guard(|| {
        let y = self::labels(labels, n)?;
        let t = min_threshold_for_sensitivity(&y, slice(probs, n, "probs")?, floor).map_err(fail)?;
        write(out, t)?;
        Ok(NuStatus::Ok)
    })
}

/// Smallest threshold whose specificity reaches `floor`.
///
/// # Safety
/// `labels` and `probs` must hold `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nu_threshold_for_specificity(
    labels: *const u8,
    probs: *const f64,
    n: usize,
    floor: f64,
    out: *mut f64,
) -> NuStatus {
    guard(|| {
        let y = self::labels(labels, n)?;
        let t = min_threshold_for_specificity(&y, slice(probs, n, "probs")?, floor).map_err(fail)?;
        write(out, t)?;
        Ok(NuStatus::Ok)
    })
}
