//! C interface to the `edain` library.
//!
//! Every function returns an [`EdainStatus`]; on failure a message is stored
//! per thread and can be read with [`edain_last_error`]. Objects are handed
//! out as opaque pointers and must be released with the matching `*_free`
//! function. Arrays are flat, row-major `N x d x T` buffers of `double`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use edain::adaptive::{AdaptiveLayer, EdainLayer, EdainMode, EdainParams};
use edain::flow_kl::{fit_kl, generate_direction, normalize_direction, KlBijectorParams, KlFitConfig};
use edain::harness::{fit_preprocessing, Checkpoint, Method, PreprocessOptions};
use edain::metrics::{amex_metric, cohen_kappa, macro_f1, AmexInputs};
use edain::synthgen::{generate_dataset, SynthConfig};
use edain::{Error, TimeSeriesBatch};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdainStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Numerical = 4,
    Domain = 5,
    Io = 6,
    Parse = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdainLayerMode {
    GlobalAware = 0,
    LocalAware = 1,
}

/// An EDAIN layer (parameters plus running mean).
pub struct EdainLayerHandle(AdaptiveLayer);

/// A fitted EDAIN-KL bijector.
pub struct EdainKlHandle(KlBijectorParams);

/// A fitted static preprocessing pipeline or other checkpoint.
pub struct EdainPreprocessHandle(Checkpoint);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> EdainStatus {
    match e {
        Error::Shape(_) | Error::StaleCache | Error::Empty(_) => EdainStatus::Shape,
        Error::InvalidArgument(_) => EdainStatus::InvalidArgument,
        Error::NonFinite(_) | Error::Numerical(_) => EdainStatus::Numerical,
        Error::Domain { .. } => EdainStatus::Domain,
        Error::Io { .. } => EdainStatus::Io,
        Error::Parse { .. } | Error::Json(_) => EdainStatus::Parse,
    }
}

struct Fail(EdainStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EdainStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EdainStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            EdainStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(EdainStatus::NullPointer, format!("{what} is null"))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn batch(p: *const f64, n: usize, d: usize, t: usize) -> Result<TimeSeriesBatch, Fail> {
    let len = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(t))
        .ok_or_else(|| Fail(EdainStatus::Shape, "N * d * T overflows".into()))?;
    let values = input(p, len, "data")?.to_vec();
    Ok(TimeSeriesBatch::new(n, d, t, values)?)
}

unsafe fn handle_ref<'a, T>(h: *const T) -> Result<&'a T, Fail> {
    h.as_ref().ok_or_else(|| null("handle"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(EdainStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn into_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(EdainStatus::InvalidArgument, "string contains a nul byte".into()))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn edain_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn edain_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn edain_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates an EDAIN layer with `d` features at its initial parameters.
/// `mode` is an [`EdainLayerMode`] value.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn edain_layer_new(d: usize, mode: u32, out: *mut *mut EdainLayerHandle) -> EdainStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if d == 0 {
            return Err(Fail(EdainStatus::InvalidArgument, "d must be positive".into()));
        }
        let mode = match mode {
            m if m == EdainLayerMode::GlobalAware as u32 => EdainMode::GlobalAware,
            m if m == EdainLayerMode::LocalAware as u32 => EdainMode::LocalAware,
            other => return Err(Fail(EdainStatus::InvalidArgument, format!("unknown layer mode {other}"))),
        };
        let layer = EdainLayer::new(EdainParams::new(d, mode))?;
        *out = Box::into_raw(Box::new(EdainLayerHandle(AdaptiveLayer::Edain(layer))));
        Ok(())
    })
}

/// Restores a layer (EDAIN or DAIN) from its JSON form.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn edain_layer_from_json(json: *const c_char, out: *mut *mut EdainLayerHandle) -> EdainStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let layer = AdaptiveLayer::from_json(c_str(json, "json")?)?;
        *out = Box::into_raw(Box::new(EdainLayerHandle(layer)));
        Ok(())
    })
}

/// Serialises the layer; free the result with [`edain_string_free`].
///
/// # Safety
/// `layer` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn edain_layer_to_json(layer: *const EdainLayerHandle, out: *mut *mut c_char) -> EdainStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = into_c_string(handle_ref(layer)?.0.to_json()?)?;
        Ok(())
    })
}

/// Applies the layer to `n x d x T` values. In training mode the running
/// mean is updated.
///
/// # Safety
/// `x` and `out` must each hold `n * d * t` doubles.
#[no_mangle]
pub unsafe extern "C" fn edain_layer_forward(
    layer: *mut EdainLayerHandle,
    x: *const f64,
    n: usize,
    d: usize,
    t: usize,
    training: bool,
    out: *mut f64,
) -> EdainStatus {
    guard(|| {
        let layer = layer.as_mut().ok_or_else(|| null("handle"))?;
        let xb = batch(x, n, d, t)?;
        let (y, _) = layer.0.forward(&xb, training)?;
        output(out, y.len(), "out")?.copy_from_slice(y.as_slice());
        Ok(())
    })
}

/// # Safety
/// `layer` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn edain_layer_free(layer: *mut EdainLayerHandle) {
    if !layer.is_null() {
        drop(Box::from_raw(layer));
    }
}

/// Fits the EDAIN-KL bijector by maximum likelihood with default settings
/// (warm start, Adam, batch 256) for `epochs` epochs.
///
/// # Safety
/// `x` must hold `n * d * t` doubles and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn edain_kl_fit(
    x: *const f64,
    n: usize,
    d: usize,
    t: usize,
    epochs: usize,
    seed: u64,
    out: *mut *mut EdainKlHandle,
) -> EdainStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let xb = batch(x, n, d, t)?;
        let config = KlFitConfig {
            epochs,
            seed,
            ..KlFitConfig::default()
        };
        *out = Box::into_raw(Box::new(EdainKlHandle(fit_kl(&xb, &config)?.params)));
        Ok(())
    })
}

/// Normalising direction. `log_det`, if not null, receives one value per
/// series.
///
/// # Safety
/// `x` and `out` hold `n * d * t` doubles; `log_det` is null or holds `n`.
#[no_mangle]
pub unsafe extern "C" fn edain_kl_normalize(
    kl: *const EdainKlHandle,
    x: *const f64,
    n: usize,
    d: usize,
    t: usize,
    out: *mut f64,
    log_det: *mut f64,
) -> EdainStatus {
    guard(|| {
        let p = &handle_ref(kl)?.0;
        let (z, ld) = normalize_direction(&batch(x, n, d, t)?, p)?;
        output(out, z.len(), "out")?.copy_from_slice(z.as_slice());
        if !log_det.is_null() {
            output(log_det, ld.len(), "log_det")?.copy_from_slice(&ld);
        }
        Ok(())
    })
}

/// Generating (inverse) direction; fails with `Domain` when a value falls
/// outside the range of the outlier sublayer.
///
/// # Safety
/// `z` and `out` hold `n * d * t` doubles.
#[no_mangle]
pub unsafe extern "C" fn edain_kl_generate(
    kl: *const EdainKlHandle,
    z: *const f64,
    n: usize,
    d: usize,
    t: usize,
    out: *mut f64,
) -> EdainStatus {
    guard(|| {
        let p = &handle_ref(kl)?.0;
        let x = generate_direction(&batch(z, n, d, t)?, p)?;
        output(out, x.len(), "out")?.copy_from_slice(x.as_slice());
        Ok(())
    })
}

/// # Safety
/// `kl` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn edain_kl_free(kl: *mut EdainKlHandle) {
    if !kl.is_null() {
        drop(Box::from_raw(kl));
    }
}

/// Fits a static preprocessing method (`"zscore"`, `"minmax"`,
/// `"winsorize+zscore"`, `"zscore+yj"`, `"winsorize+zscore+yj"`,
/// `"cdf_inversion"`, `"kdit"`) on training values.
///
/// # Safety
/// `method` is a nul-terminated string, `x` holds `n * d * t` doubles and
/// `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn edain_static_fit(
    method: *const c_char,
    x: *const f64,
    n: usize,
    d: usize,
    t: usize,
    out: *mut *mut EdainPreprocessHandle,
) -> EdainStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let method: Method = c_str(method, "method")?.parse()?;
        let opts = PreprocessOptions::default();
        if method.static_steps(&opts).is_none() {
            return Err(Fail(EdainStatus::InvalidArgument, format!("{method} is not a static method")));
        }
        let c = fit_preprocessing(method, None, &opts, &batch(x, n, d, t)?, 0)?;
        *out = Box::into_raw(Box::new(EdainPreprocessHandle(c)));
        Ok(())
    })
}

/// # Safety
/// `x` and `out` hold `n * d * t` doubles.
#[no_mangle]
pub unsafe extern "C" fn edain_static_apply(
    pre: *const EdainPreprocessHandle,
    x: *const f64,
    n: usize,
    d: usize,
    t: usize,
    out: *mut f64,
) -> EdainStatus {
    guard(|| {
        let y = handle_ref(pre)?.0.apply(&batch(x, n, d, t)?)?;
        output(out, y.len(), "out")?.copy_from_slice(y.as_slice());
        Ok(())
    })
}

/// # Safety
/// `pre` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn edain_static_free(pre: *mut EdainPreprocessHandle) {
    if !pre.is_null() {
        drop(Box::from_raw(pre));
    }
}

/// Generates the built-in three-feature synthetic dataset with `t` steps.
///
/// # Safety
/// `values` holds `n * 3 * t` doubles and `labels` holds `n` entries.
#[no_mangle]
pub unsafe extern "C" fn edain_synth_generate(
    n: usize,
    t: usize,
    seed: u64,
    values: *mut f64,
    labels: *mut u8,
) -> EdainStatus {
    guard(|| {
        let config = SynthConfig {
            t,
            ..SynthConfig::builtin(n, seed)
        };
        let data = generate_dataset(&config)?;
        output(values, data.batch.len(), "values")?.copy_from_slice(data.batch.as_slice());
        for (o, &y) in output(labels, n, "labels")?.iter_mut().zip(&data.labels) {
            *o = y as u8;
        }
        Ok(())
    })
}

/// Amex metric `M`. `weights` may be null for uniform weights.
///
/// # Safety
/// `predictions` and `labels` hold `n` entries; `weights` is null or holds `n`.
#[no_mangle]
pub unsafe extern "C" fn edain_amex_metric(
    predictions: *const f64,
    labels: *const u8,
    weights: *const f64,
    n: usize,
    out: *mut f64,
) -> EdainStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let p = input(predictions, n, "predictions")?.to_vec();
        let y: Vec<usize> = input(labels, n, "labels")?.iter().map(|&v| v as usize).collect();
        let inputs = if weights.is_null() {
            AmexInputs::new(p, y)?
        } else {
            AmexInputs::with_weights(p, y, input(weights, n, "weights")?.to_vec())?
        };
        *out = amex_metric(&inputs)?.m;
        Ok(())
    })
}

unsafe fn class_pair(pred: *const u8, truth: *const u8, n: usize) -> Result<(Vec<usize>, Vec<usize>), Fail> {
    let p = input(pred, n, "predicted")?.iter().map(|&v| v as usize).collect();
    let t = input(truth, n, "truth")?.iter().map(|&v| v as usize).collect();
    Ok((p, t))
}

/// # Safety
/// `predicted` and `truth` hold `n` class indices below `classes`.
#[no_mangle]
pub unsafe extern "C" fn edain_cohen_kappa(
    predicted: *const u8,
    truth: *const u8,
    n: usize,
    classes: usize,
    out: *mut f64,
) -> EdainStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let (p, t) = class_pair(predicted, truth, n)?;
        *out = cohen_kappa(&p, &t, classes)?;
        Ok(())
    })
}

/// # Safety
/// `predicted` and `truth` hold `n` class indices below `classes`.
#[no_mangle]
pub unsafe extern "C" fn edain_macro_f1(
    predicted: *const u8,
    truth: *const u8,
    n: usize,
    classes: usize,
    out: *mut f64,
) -> EdainStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let (p, t) = class_pair(predicted, truth, n)?;
        *out = macro_f1(&p, &t, classes)?;
        Ok(())
    })
}
