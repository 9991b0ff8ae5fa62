//! C interface to the gtmancer library.
//!
//! Every function returns a [`GtmStatus`]; on failure the message is
//! available from [`gtm_last_error`] on the same thread. Handles are opaque
//! and owned by the caller, who releases them with the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gtmancer::attention::{dykstra_project, InterReduction};
use gtmancer::dataio::{load_dataset, synth_generate, LabelMask, MultiOmicsDataset, SynthSpec};
use gtmancer::diffcore::{spectral_norm, DenseMatrix};
use gtmancer::model::{
    evaluate, fit, forward, load_model, predict, save_model, Fusion, Mode, ModelParams, Optimizer, TrainConfig,
};
use gtmancer::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    Panic = 6,
}

impl From<&Error> for GtmStatus {
    fn from(e: &Error) -> Self {
        if e.is_numeric() {
            return GtmStatus::Numeric;
        }
        match e {
            Error::Io(_) => GtmStatus::Io,
            Error::Parse { .. }
            | Error::Format(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Container(_)
            | Error::DigestMismatch { .. } => GtmStatus::Format,
            _ => GtmStatus::InvalidArgument,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtmFusion {
    Mean = 0,
    Sum = 1,
    Concat = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtmOptimizer {
    Gd = 0,
    Adam = 1,
}

/// Training settings. Obtain defaults from [`gtm_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GtmConfig {
    pub k: usize,
    pub tau: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub dropout: f64,
    pub fusion: GtmFusion,
    pub optimizer: GtmOptimizer,
    pub seed: u64,
    pub label_ratio: f64,
    pub latent_dim: usize,
}

impl From<&GtmConfig> for TrainConfig {
    fn from(c: &GtmConfig) -> Self {
        TrainConfig {
            k: c.k,
            tau: c.tau,
            learning_rate: c.learning_rate,
            epochs: c.epochs,
            weight_decay: c.weight_decay,
            dropout: c.dropout,
            fusion: match c.fusion {
                GtmFusion::Mean => Fusion::Mean,
                GtmFusion::Sum => Fusion::Sum,
                GtmFusion::Concat => Fusion::Concat,
            },
            optimizer: match c.optimizer {
                GtmOptimizer::Gd => Optimizer::Gd,
                GtmOptimizer::Adam => Optimizer::Adam,
            },
            inter_reduction: InterReduction::default(),
            seed: c.seed,
            label_ratio: c.label_ratio,
            latent_dim: c.latent_dim,
            ..TrainConfig::default()
        }
    }
}

/// Opaque dataset handle.
pub struct GtmDataset {
    inner: MultiOmicsDataset,
}

/// Opaque trained-model handle.
pub struct GtmModel {
    params: ModelParams,
    config: TrainConfig,
    mask: Option<LabelMask>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(GtmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(GtmStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(GtmStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(GtmStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GtmStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GtmStatus::Ok,
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
            set_error(format!("panic: {msg}"));
            GtmStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn gtm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gtm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn gtm_config_default() -> GtmConfig {
    let c = TrainConfig::default();
    GtmConfig {
        k: c.k,
        tau: c.tau,
        learning_rate: c.learning_rate,
        epochs: c.epochs,
        weight_decay: c.weight_decay,
        dropout: c.dropout,
        fusion: GtmFusion::Mean,
        optimizer: GtmOptimizer::Adam,
        seed: c.seed,
        label_ratio: c.label_ratio,
        latent_dim: c.latent_dim,
    }
}

/// Loads a dataset from `n_views` view CSV paths and a label CSV.
///
/// # Safety
/// `view_paths` must point to `n_views` valid NUL-terminated strings,
/// `labels_path` must be a valid NUL-terminated string and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn gtm_dataset_load(
    view_paths: *const *const c_char,
    n_views: usize,
    labels_path: *const c_char,
    out: *mut *mut GtmDataset,
) -> GtmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if view_paths.is_null() {
            return Err(null("view_paths"));
        }
        let views = (0..n_views)
            .map(|i| path_arg(*view_paths.add(i), "view path"))
            .collect::<Result<Vec<_>, _>>()?;
        let labels = path_arg(labels_path, "labels_path")?;
        let inner = load_dataset(&views, labels)?;
        store(out, GtmDataset { inner });
        Ok(())
    })
}

/// Generates a Gaussian-cluster dataset with `dim` features per view.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gtm_dataset_synth(
    n: usize,
    m: usize,
    classes: usize,
    dim: usize,
    separation: f64,
    sigma: f64,
    seed: u64,
    out: *mut *mut GtmDataset,
) -> GtmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mut spec = SynthSpec::new(n, m, classes, separation, sigma, seed);
        spec.dims = vec![dim; m];
        let inner = synth_generate(&spec)?;
        store(out, GtmDataset { inner });
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn gtm_dataset_free(ds: *mut GtmDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Sample count, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn gtm_dataset_n_samples(ds: *const GtmDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n_samples())
}

/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn gtm_dataset_n_views(ds: *const GtmDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.n_views())
}

/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn gtm_dataset_n_classes(ds: *const GtmDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.class_count)
}

/// Copies the integer labels into `labels`, which holds `len` entries.
///
/// # Safety
/// `ds` must be a live dataset handle and `labels` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn gtm_dataset_labels(ds: *const GtmDataset, labels: *mut usize, len: usize) -> GtmStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        copy_out(&ds.inner.labels, labels, len)
    })
}

unsafe fn copy_out<T: Copy>(src: &[T], dst: *mut T, len: usize) -> Result<(), Fail> {
    if dst.is_null() {
        return Err(null("output buffer"));
    }
    if len != src.len() {
        return Err(invalid(format!("output buffer holds {len} values, need {}", src.len())));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
    Ok(())
}

/// Trains a model with the semi-supervised split implied by `config`.
///
/// # Safety
/// `ds` must be a live dataset handle, `config` readable (null selects the
/// defaults) and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gtm_model_train(
    ds: *const GtmDataset,
    config: *const GtmConfig,
    out: *mut *mut GtmModel,
) -> GtmStatus {
    guard(|| {
        let ds = deref(ds, "dataset")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let config = match config.as_ref() {
            Some(c) => TrainConfig::from(c),
            None => TrainConfig::default(),
        };
        let result = fit(&ds.inner, &config)?;
        store(
            out,
            GtmModel {
                params: result.params,
                config,
                mask: Some(result.mask),
            },
        );
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn gtm_model_free(model: *mut GtmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live model handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gtm_model_save(model: *const GtmModel, path: *const c_char) -> GtmStatus {
    guard(|| {
        let model = deref(model, "model")?;
        save_model(path_arg(path, "path")?, &model.params, &model.config)?;
        Ok(())
    })
}

/// Loads a saved model. The loaded model has no training split, so
/// evaluation scores every sample.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gtm_model_load(path: *const c_char, out: *mut *mut GtmModel) -> GtmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (header, params) = load_model(path_arg(path, "path")?)?;
        store(
            out,
            GtmModel {
                params,
                config: header.config,
                mask: None,
            },
        );
        Ok(())
    })
}

/// Accuracy and macro-F1 on the held-out samples of the training split, or
/// on all samples for a loaded model.
///
/// # Safety
/// `model` and `ds` must be live handles; `accuracy` and `macro_f1` writable.
#[no_mangle]
pub unsafe extern "C" fn gtm_model_evaluate(
    model: *const GtmModel,
    ds: *const GtmDataset,
    accuracy: *mut f64,
    macro_f1: *mut f64,
) -> GtmStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let ds = deref(ds, "dataset")?;
        if accuracy.is_null() || macro_f1.is_null() {
            return Err(null("metric output"));
        }
        let n = ds.inner.n_samples();
        let everything = LabelMask {
            train_indices: Vec::new(),
            test_indices: (0..n).collect(),
            seed: model.config.seed,
        };
        let mask = match &model.mask {
            Some(m) if m.train_indices.len() + m.test_indices.len() == n => m,
            _ => &everything,
        };
        let report = evaluate(&ds.inner, &model.params, &model.config, mask)?;
        *accuracy = report.accuracy;
        *macro_f1 = report.macro_f1;
        Ok(())
    })
}

/// Writes the predicted class of every sample into `out`.
///
/// # Safety
/// `model` and `ds` must be live handles and `out` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn gtm_model_predict(
    model: *const GtmModel,
    ds: *const GtmDataset,
    out: *mut usize,
    len: usize,
) -> GtmStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let ds = deref(ds, "dataset")?;
        let fwd = forward(&ds.inner, &model.params, &model.config, Mode::Eval, None)?;
        copy_out(&predict(&fwd.logits), out, len)
    })
}

unsafe fn matrix_arg(data: *const f64, rows: usize, cols: usize) -> Result<DenseMatrix, Fail> {
    if data.is_null() {
        return Err(null("data"));
    }
    let len = rows.checked_mul(cols).ok_or_else(|| invalid("matrix size overflows"))?;
    Ok(DenseMatrix::new(rows, cols, std::slice::from_raw_parts(data, len).to_vec())?)
}

/// Largest singular value of a row-major `rows × cols` matrix.
///
/// # Safety
/// `data` must be readable for `rows * cols` values and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gtm_spectral_norm(
    data: *const f64,
    rows: usize,
    cols: usize,
    tol: f64,
    max_iter: usize,
    out: *mut f64,
) -> GtmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = spectral_norm(&matrix_arg(data, rows, cols)?, tol, max_iter)?;
        Ok(())
    })
}

/// Projects a row-major `m × m` matrix onto symmetric matrices with unit
/// row sums, writing the result to `out`.
///
/// # Safety
/// `data` must be readable and `out` writable for `m * m` values.
#[no_mangle]
pub unsafe extern "C" fn gtm_dykstra_project(
    data: *const f64,
    m: usize,
    tol: f64,
    max_iter: usize,
    out: *mut f64,
) -> GtmStatus {
    guard(|| {
        let raw = matrix_arg(data, m, m)?;
        let (p, _) = dykstra_project(&raw, tol, max_iter)?;
        copy_out(p.data(), out, m * m)
    })
}
