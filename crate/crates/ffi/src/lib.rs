//! C ABI over the `fixclr` library.
//!
//! Every fallible function returns a [`FixclrStatus`]; on failure a
//! message is available from [`fixclr_last_error`] on the same thread.
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Panics never unwind into C; they
//! are reported as [`FixclrStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fixclr::data::{read_dataset, synth_generate, write_dataset, MultiDomainDataset, SyntheticConfig};
use fixclr::loss::{fixclr_loss_and_grad, fixclr_oracle, FixClrConfig, RepresentationBatch, SimilarityMode, Variant};
use fixclr::model::{read_checkpoint, rows_to_array, Model, ModelConfig};
use fixclr::trainer::cosine_lr;
use fixclr::Error;

/// Result of every fallible call. The first values match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixclrStatus {
    Ok = 0,
    Config = 3,
    Data = 4,
    Numeric = 5,
    Io = 6,
    Domain = 7,
    NullPointer = 8,
    InvalidArgument = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixclrVariant {
    RepelOnly = 0,
    WithPositives = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixclrSimilarity {
    Centroid = 0,
    MeanPairwise = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixclrLossConfig {
    pub temperature: f64,
    pub loss_weight: f64,
    pub variant: FixclrVariant,
    pub similarity: FixclrSimilarity,
}

impl From<FixclrLossConfig> for FixClrConfig {
    fn from(c: FixclrLossConfig) -> Self {
        FixClrConfig {
            temperature: c.temperature,
            loss_weight: c.loss_weight,
            variant: match c.variant {
                FixclrVariant::RepelOnly => Variant::RepelOnly,
                FixclrVariant::WithPositives => Variant::WithPositives,
            },
            similarity: match c.similarity {
                FixclrSimilarity::Centroid => SimilarityMode::Centroid,
                FixclrSimilarity::MeanPairwise => SimilarityMode::MeanPairwise,
            },
        }
    }
}

/// Multi-domain dataset handle.
pub struct FixclrDataset {
    inner: MultiDomainDataset,
}

/// Model handle (encoder, projection head, classifier).
pub struct FixclrModel {
    inner: Model,
}

/// Labeled representation batch handle, the input of the loss.
pub struct FixclrBatch {
    inner: RepresentationBatch,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Lib(Error),
    Status(FixclrStatus, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn status_of(e: &Error) -> FixclrStatus {
    match e {
        Error::Config(_) => FixclrStatus::Config,
        Error::Data(_) => FixclrStatus::Data,
        Error::Numeric(_) => FixclrStatus::Numeric,
        Error::Domain(_) => FixclrStatus::Domain,
        Error::Io { .. } => FixclrStatus::Io,
    }
}

/// Runs `f`, recording any failure (including a panic) as the last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FixclrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FixclrStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            let s = status_of(&e);
            set_error(e.to_string());
            s
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| (*s).to_owned())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_owned());
            set_error(format!("panic: {msg}"));
            FixclrStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(FixclrStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: String) -> Failure {
    Failure::Status(FixclrStatus::InvalidArgument, msg)
}

/// # Safety
/// `p` must be NULL or a valid NUL-terminated string that outlives `'a`.
unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and NUL-terminated per the caller's contract.
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

/// # Safety
/// As for [`str_arg`].
unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    // SAFETY: forwarded caller contract.
    unsafe { str_arg(p, what) }.map(PathBuf::from)
}

/// # Safety
/// `p` must be NULL or point to `len` readable values.
unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and `len` elements long per the caller's contract.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

/// # Safety
/// `out` must be NULL or writable.
unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and writable per the caller's contract.
    unsafe { out.write(value) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fixclr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL if none. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn fixclr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Default loss settings: temperature 0.5, weight 1, repel-only, centroid.
#[no_mangle]
pub extern "C" fn fixclr_loss_config_default() -> FixclrLossConfig {
    FixclrLossConfig {
        temperature: 0.5,
        loss_weight: 1.0,
        variant: FixclrVariant::RepelOnly,
        similarity: FixclrSimilarity::Centroid,
    }
}

/// Cosine-annealed learning rate at `step` of `total_steps`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fixclr_cosine_lr(step: usize, total_steps: usize, base_lr: f64, out: *mut f64) -> FixclrStatus {
    guard(|| {
        let lr = cosine_lr(step, total_steps, base_lr)?;
        // SAFETY: forwarded caller contract.
        unsafe { put(out, lr, "out") }
    })
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// The acceptance benchmark dataset (4 domains, 5 classes, 16 features).
///
/// # Safety
/// `out` must be writable; on success it receives a handle to free with
/// [`fixclr_dataset_free`].
#[no_mangle]
pub unsafe extern "C" fn fixclr_dataset_generate_benchmark(seed: u64, out: *mut *mut FixclrDataset) -> FixclrStatus {
    guard(|| {
        let ds = synth_generate(&SyntheticConfig::benchmark(seed))?;
        // SAFETY: forwarded caller contract.
        unsafe { put(out, boxed(FixclrDataset { inner: ds }), "out") }
    })
}

/// Synthetic dataset from a JSON-encoded synthetic config (same keys as the
/// `[dataset]` section of an experiment config, without `source`).
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fixclr_dataset_generate(config_json: *const c_char, out: *mut *mut FixclrDataset) -> FixclrStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let text = unsafe { str_arg(config_json, "config_json") }?;
        let cfg: SyntheticConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("synthetic config: {e}")))?;
        let ds = synth_generate(&cfg)?;
        // SAFETY: forwarded caller contract.
        unsafe { put(out, boxed(FixclrDataset { inner: ds }), "out") }
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fixclr_dataset_load(path: *const c_char, out: *mut *mut FixclrDataset) -> FixclrStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let p = unsafe { path_arg(path, "path") }?;
        let ds = read_dataset(&p)?;
        // SAFETY: forwarded caller contract.
        unsafe { put(out, boxed(FixclrDataset { inner: ds }), "out") }
    })
}

/// # Safety
/// `ds` must be a live dataset handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fixclr_dataset_save(ds: *const FixclrDataset, path: *const c_char) -> FixclrStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let ds = unsafe { ds.as_ref() }.ok_or_else(|| null("ds"))?;
        // SAFETY: forwarded caller contract.
        let p = unsafe { path_arg(path, "path") }?;
        write_dataset(&ds.inner, &p)?;
        Ok(())
    })
}

/// Number of samples, or 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn fixclr_dataset_len(ds: *const FixclrDataset) -> usize {
    // SAFETY: caller contract.
    unsafe { ds.as_ref() }.map_or(0, |d| d.inner.len())
}

/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn fixclr_dataset_num_domains(ds: *const FixclrDataset) -> usize {
    // SAFETY: caller contract.
    unsafe { ds.as_ref() }.map_or(0, |d| d.inner.num_domains())
}

/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn fixclr_dataset_num_classes(ds: *const FixclrDataset) -> usize {
    // SAFETY: caller contract.
    unsafe { ds.as_ref() }.map_or(0, |d| d.inner.num_classes())
}

/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn fixclr_dataset_feature_dim(ds: *const FixclrDataset) -> usize {
    // SAFETY: caller contract.
    unsafe { ds.as_ref() }.map_or(0, |d| d.inner.feature_dim())
}

/// Copies sample `index`: `feature_dim` values into `features`, plus its
/// domain and class. Any of the three outputs may be NULL.
///
/// # Safety
/// `ds` must be a live dataset handle; non-NULL outputs must be writable
/// (`features` for `feature_dim` values).
#[no_mangle]
pub unsafe extern "C" fn fixclr_dataset_sample(
    ds: *const FixclrDataset,
    index: usize,
    features: *mut f64,
    domain_id: *mut usize,
    class_id: *mut usize,
) -> FixclrStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let ds = unsafe { ds.as_ref() }.ok_or_else(|| null("ds"))?;
        let s = ds
            .inner
            .samples()
            .get(index)
            .ok_or_else(|| invalid(format!("index {index} out of range for {} samples", ds.inner.len())))?;
        // SAFETY: forwarded caller contract for each non-NULL output.
        unsafe {
            if !features.is_null() {
                ptr::copy_nonoverlapping(s.features.as_ptr(), features, s.features.len());
            }
            if !domain_id.is_null() {
                domain_id.write(s.domain_id);
            }
            if !class_id.is_null() {
                class_id.write(s.class_id);
            }
        }
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fixclr_dataset_free(ds: *mut FixclrDataset) {
    if !ds.is_null() {
        // SAFETY: allocated by Box::into_raw in this crate, freed once.
        drop(unsafe { Box::from_raw(ds) });
    }
}

/// Batch of `n` unit vectors of length `dim` (row-major), with per-row
/// domain and class ids. `eligible` may be NULL (all rows eligible);
/// otherwise nonzero bytes mark eligible rows.
///
/// # Safety
/// `vectors` must hold `n * dim` values, `domain_ids` and `class_ids` `n`
/// values each, `eligible` NULL or `n` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fixclr_batch_new(
    vectors: *const f64,
    n: usize,
    dim: usize,
    domain_ids: *const usize,
    class_ids: *const usize,
    eligible: *const u8,
    out: *mut *mut FixclrBatch,
) -> FixclrStatus {
    guard(|| {
        if dim == 0 {
            return Err(invalid("dim must be positive".into()));
        }
        let len = n.checked_mul(dim).ok_or_else(|| invalid("n * dim overflows".into()))?;
        // SAFETY: forwarded caller contract.
        let (v, d, c) = unsafe {
            (slice_arg(vectors, len, "vectors")?, slice_arg(domain_ids, n, "domain_ids")?, slice_arg(class_ids, n, "class_ids")?)
        };
        let e: Vec<bool> = if eligible.is_null() {
            vec![true; n]
        } else {
            // SAFETY: forwarded caller contract.
            unsafe { slice_arg(eligible, n, "eligible") }?.iter().map(|b| *b != 0).collect()
        };
        let rows = v.chunks_exact(dim).map(<[f64]>::to_vec).collect();
        let batch = RepresentationBatch::new(rows, d.to_vec(), c.to_vec(), e)?;
        // SAFETY: forwarded caller contract.
        unsafe { put(out, boxed(FixclrBatch { inner: batch }), "out") }
    })
}

/// # Safety
/// `batch` must be NULL or a live batch handle.
#[no_mangle]
pub unsafe extern "C" fn fixclr_batch_len(batch: *const FixclrBatch) -> usize {
    // SAFETY: caller contract.
    unsafe { batch.as_ref() }.map_or(0, |b| b.inner.len())
}

/// # Safety
/// `batch` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fixclr_batch_free(batch: *mut FixclrBatch) {
    if !batch.is_null() {
        // SAFETY: allocated by Box::into_raw in this crate, freed once.
        drop(unsafe { Box::from_raw(batch) });
    }
}

/// Loss value and, when `grad` is non-NULL, its gradient with respect to
/// the batch vectors (`n * dim` values, row-major). `config` may be NULL
/// for the defaults. `skipped` (optional) is set to 1 when the batch had
/// fewer than two eligible classes, in which case the value is 0.
///
/// # Safety
/// `batch` must be a live handle, `config` NULL or readable, `value`
/// writable, `grad` NULL or writable for `n * dim` values, `skipped` NULL
/// or writable.
#[no_mangle]
pub unsafe extern "C" fn fixclr_loss(
    batch: *const FixclrBatch,
    config: *const FixclrLossConfig,
    value: *mut f64,
    grad: *mut f64,
    skipped: *mut u8,
) -> FixclrStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let b = unsafe { batch.as_ref() }.ok_or_else(|| null("batch"))?;
        // SAFETY: forwarded caller contract.
        let cfg: FixClrConfig = unsafe { config.as_ref() }.copied().unwrap_or_else(|| fixclr_loss_config_default()).into();
        let (out, g) = fixclr_loss_and_grad(&b.inner, &cfg)?;
        // SAFETY: forwarded caller contract.
        unsafe {
            put(value, out.value, "value")?;
            if !grad.is_null() {
                ptr::copy_nonoverlapping(g.as_ptr(), grad, g.len());
            }
            if !skipped.is_null() {
                skipped.write(u8::from(out.skipped));
            }
        }
        Ok(())
    })
}

/// Reference value of the loss computed by direct enumeration (slow; at
/// most 512 rows).
///
/// # Safety
/// As for [`fixclr_loss`].
#[no_mangle]
pub unsafe extern "C" fn fixclr_loss_oracle(
    batch: *const FixclrBatch,
    config: *const FixclrLossConfig,
    value: *mut f64,
) -> FixclrStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let b = unsafe { batch.as_ref() }.ok_or_else(|| null("batch"))?;
        // SAFETY: forwarded caller contract.
        let cfg: FixClrConfig = unsafe { config.as_ref() }.copied().unwrap_or_else(|| fixclr_loss_config_default()).into();
        let out = fixclr_oracle(&b.inner, &cfg)?;
        // SAFETY: forwarded caller contract.
        unsafe { put(value, out.value, "value") }
    })
}

/// Freshly initialized model with the default architecture.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fixclr_model_new(
    input_dim: usize,
    num_classes: usize,
    seed: u64,
    out: *mut *mut FixclrModel,
) -> FixclrStatus {
    guard(|| {
        let m = Model::new(ModelConfig::new(input_dim, num_classes), seed)?;
        // SAFETY: forwarded caller contract.
        unsafe { put(out, boxed(FixclrModel { inner: m }), "out") }
    })
}

/// Model from a training checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fixclr_model_load(path: *const c_char, out: *mut *mut FixclrModel) -> FixclrStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let p = unsafe { path_arg(path, "path") }?;
        let m = read_checkpoint(&p)?.model()?;
        // SAFETY: forwarded caller contract.
        unsafe { put(out, boxed(FixclrModel { inner: m }), "out") }
    })
}

/// # Safety
/// `model` must be NULL or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn fixclr_model_input_dim(model: *const FixclrModel) -> usize {
    // SAFETY: caller contract.
    unsafe { model.as_ref() }.map_or(0, |m| m.inner.config().input_dim)
}

/// # Safety
/// `model` must be NULL or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn fixclr_model_num_classes(model: *const FixclrModel) -> usize {
    // SAFETY: caller contract.
    unsafe { model.as_ref() }.map_or(0, |m| m.inner.config().num_classes)
}

/// # Safety
/// `model` must be NULL or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn fixclr_model_projection_dim(model: *const FixclrModel) -> usize {
    // SAFETY: caller contract.
    unsafe { model.as_ref() }.map_or(0, |m| m.inner.config().projection_dim)
}

/// Forward pass over `n` inputs of length `dim` (row-major). Writes
/// `n * num_classes` logits and, when `projected` is non-NULL,
/// `n * projection_dim` unit-norm projections.
///
/// # Safety
/// `model` must be a live handle, `inputs` hold `n * dim` values, `logits`
/// be writable for `n * num_classes` values and `projected` NULL or
/// writable for `n * projection_dim` values.
#[no_mangle]
pub unsafe extern "C" fn fixclr_model_forward(
    model: *const FixclrModel,
    inputs: *const f64,
    n: usize,
    dim: usize,
    logits: *mut f64,
    projected: *mut f64,
) -> FixclrStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let m = unsafe { model.as_ref() }.ok_or_else(|| null("model"))?;
        if dim == 0 {
            return Err(invalid("dim must be positive".into()));
        }
        let len = n.checked_mul(dim).ok_or_else(|| invalid("n * dim overflows".into()))?;
        // SAFETY: forwarded caller contract.
        let x = unsafe { slice_arg(inputs, len, "inputs") }?;
        let rows: Vec<Vec<f64>> = x.chunks_exact(dim).map(<[f64]>::to_vec).collect();
        let f = m.inner.forward_batch(&rows_to_array(&rows, dim)?)?;
        if logits.is_null() {
            return Err(null("logits"));
        }
        let l = f.logits.as_standard_layout();
        let p = f.projected.as_standard_layout();
        // SAFETY: forwarded caller contract.
        unsafe {
            ptr::copy_nonoverlapping(l.as_ptr(), logits, l.len());
            if !projected.is_null() {
                ptr::copy_nonoverlapping(p.as_ptr(), projected, p.len());
            }
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fixclr_model_free(model: *mut FixclrModel) {
    if !model.is_null() {
        // SAFETY: allocated by Box::into_raw in this crate, freed once.
        drop(unsafe { Box::from_raw(model) });
    }
}
