//! C ABI over `eventcube`.
//!
//! Every object crosses the boundary as an opaque handle created by an
//! `ec_*_new` / `ec_*_load` function and released by the matching `ec_*_free`.
//! Fallible calls return an [`EcStatus`]; on failure a description is available
//! from [`ec_last_error_message`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use eventcube::ingest::{self, EventSeries, IngestError, ValidationPolicy};
use eventcube::sae::{self, SaeError, SaeModel};
use eventcube::tensorize::{self, BinningConfig, EventTensor, TensorError, TensorKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    /// Malformed file contents (bad magic, version, truncation, bad rows).
    Format = 4,
    /// Tensor shape or kind does not fit the model.
    ArchMismatch = 5,
    /// Input data violates an invariant (too few events, non-positive energies, ...).
    InvalidData = 6,
    /// Output buffer smaller than required.
    BufferTooSmall = 7,
    Panic = 8,
}

/// An event series: timestamps with one positive modality value each.
pub struct EcSeries(EventSeries);

/// An E–t map or E–t–dt cube.
pub struct EcTensor(EventTensor);

/// A trained sparse autoencoder loaded from a checkpoint.
pub struct EcModel(SaeModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("interior nuls removed"));
}

struct Failure(EcStatus, String);

impl Failure {
    fn new(status: EcStatus, msg: impl Into<String>) -> Self {
        Failure(status, msg.into())
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        let status = match e {
            IngestError::Io { .. } => EcStatus::Io,
            IngestError::MissingHeader { .. }
            | IngestError::MalformedRow { .. }
            | IngestError::EmptyFile { .. }
            | IngestError::NonFiniteValue { .. } => EcStatus::Format,
            _ => EcStatus::InvalidData,
        };
        Failure(status, e.to_string())
    }
}

impl From<TensorError> for Failure {
    fn from(e: TensorError) -> Self {
        let status = match e {
            TensorError::Io { .. } => EcStatus::Io,
            TensorError::BadMagic(_)
            | TensorError::VersionMismatch(_)
            | TensorError::TruncatedFile { .. }
            | TensorError::DimMismatch(_) => EcStatus::Format,
            TensorError::InvalidConfig(_) => EcStatus::InvalidArgument,
            _ => EcStatus::InvalidData,
        };
        Failure(status, e.to_string())
    }
}

impl From<SaeError> for Failure {
    fn from(e: SaeError) -> Self {
        let status = match e {
            SaeError::Io { .. } => EcStatus::Io,
            SaeError::BadMagic(_) | SaeError::VersionMismatch(_) | SaeError::TruncatedFile { .. } | SaeError::Header(_) => {
                EcStatus::Format
            }
            SaeError::ArchMismatch(_) | SaeError::DimMismatch { .. } => EcStatus::ArchMismatch,
            _ => EcStatus::InvalidData,
        };
        Failure(status, e.to_string())
    }
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EcStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(EcStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    non_null(p, "path")?;
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(EcStatus::InvalidArgument, "path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failing call on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ec_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Build a series from `n` timestamps and modality values. Events are sorted by
/// time; at least two events with positive modality are required.
///
/// # Safety
/// `timestamps` and `modality` must point to `n` readable doubles, `series_id`
/// to a NUL-terminated string, and `out` to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ec_series_new(
    timestamps: *const f64,
    modality: *const f64,
    n: usize,
    series_id: *const c_char,
    out: *mut *mut EcSeries,
) -> EcStatus {
    guard(|| {
        non_null(out, "out")?;
        non_null(timestamps, "timestamps")?;
        non_null(modality, "modality")?;
        non_null(series_id, "series_id")?;
        let id = CStr::from_ptr(series_id)
            .to_str()
            .map_err(|_| Failure::new(EcStatus::InvalidArgument, "series_id is not valid UTF-8"))?;
        let t = std::slice::from_raw_parts(timestamps, n).to_vec();
        let e = std::slice::from_raw_parts(modality, n).to_vec();
        if t.iter().chain(&e).any(|v| !v.is_finite()) {
            return Err(Failure::new(EcStatus::InvalidData, "non-finite timestamp or modality value"));
        }
        let s = ingest::validate_series(EventSeries::new(id, t, e), &ValidationPolicy::default())?;
        put(out, EcSeries(s));
        Ok(())
    })
}

/// Load a `time,energy` CSV; the series id is the file stem.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ec_series_load_csv(path: *const c_char, out: *mut *mut EcSeries) -> EcStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path)?;
        let raw = ingest::parse_event_csv(&path)?;
        let s = ingest::validate_series(raw, &ValidationPolicy::default())?;
        put(out, EcSeries(s));
        Ok(())
    })
}

/// Number of events, or 0 for a null handle.
///
/// # Safety
/// `series` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn ec_series_len(series: *const EcSeries) -> usize {
    series.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `series` must be null or a handle from this library that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ec_series_free(series: *mut EcSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Bin a series with log10 modality, per-series bounds and unit-sum scaling.
/// `n_dtau == 0` produces an E–t map, otherwise an E–t–dt cube.
///
/// # Safety
/// `series` must be a live handle and `out` writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ec_tensorize(
    series: *const EcSeries,
    n_tau: usize,
    n_eps: usize,
    n_dtau: usize,
    out: *mut *mut EcTensor,
) -> EcStatus {
    guard(|| {
        non_null(series, "series")?;
        non_null(out, "out")?;
        let cfg = BinningConfig {
            n_tau,
            n_eps,
            n_dtau,
            ..BinningConfig::default()
        };
        cfg.validate()?;
        let t = tensorize::tensorize(&(*series).0, &cfg)?;
        put(out, EcTensor(t));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ec_tensor_load(path: *const c_char, out: *mut *mut EcTensor) -> EcStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path)?;
        let t = tensorize::read_tensor(&path)?;
        put(out, EcTensor(t));
        Ok(())
    })
}

/// Write a tensor file; values are stored as single precision.
///
/// # Safety
/// `tensor` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ec_tensor_save(tensor: *const EcTensor, path: *const c_char) -> EcStatus {
    guard(|| {
        non_null(tensor, "tensor")?;
        let path = path_arg(path)?;
        tensorize::write_tensor(&(*tensor).0, &path)?;
        Ok(())
    })
}

/// 2 for maps, 3 for cubes, 0 for a null handle.
///
/// # Safety
/// `tensor` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ec_tensor_ndim(tensor: *const EcTensor) -> usize {
    tensor.as_ref().map_or(0, |t| t.0.dims.len())
}

/// Total number of cells, 0 for a null handle.
///
/// # Safety
/// `tensor` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ec_tensor_len(tensor: *const EcTensor) -> usize {
    tensor.as_ref().map_or(0, |t| t.0.values.len())
}

/// Copy the dimensions (time bins first) into `dims`, which holds `capacity` entries.
///
/// # Safety
/// `tensor` must be a live handle and `dims` must point to `capacity` writable `size_t`.
#[no_mangle]
pub unsafe extern "C" fn ec_tensor_dims(tensor: *const EcTensor, dims: *mut usize, capacity: usize) -> EcStatus {
    guard(|| {
        non_null(tensor, "tensor")?;
        non_null(dims, "dims")?;
        let d = &(*tensor).0.dims;
        if capacity < d.len() {
            return Err(Failure::new(EcStatus::BufferTooSmall, format!("need {} dims", d.len())));
        }
        ptr::copy_nonoverlapping(d.as_ptr(), dims, d.len());
        Ok(())
    })
}

/// Copy the row-major cell values into `values`, which holds `capacity` doubles.
///
/// # Safety
/// `tensor` must be a live handle and `values` must point to `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ec_tensor_values(tensor: *const EcTensor, values: *mut f64, capacity: usize) -> EcStatus {
    guard(|| {
        non_null(tensor, "tensor")?;
        non_null(values, "values")?;
        let v = &(*tensor).0.values;
        if capacity < v.len() {
            return Err(Failure::new(EcStatus::BufferTooSmall, format!("need {} values", v.len())));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), values, v.len());
        Ok(())
    })
}

/// 1 for a cube, 0 for a map or a null handle.
///
/// # Safety
/// `tensor` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ec_tensor_is_cube(tensor: *const EcTensor) -> i32 {
    tensor.as_ref().map_or(0, |t| i32::from(t.0.kind == TensorKind::Cube))
}

/// # Safety
/// `tensor` must be null or a handle from this library that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ec_tensor_free(tensor: *mut EcTensor) {
    if !tensor.is_null() {
        drop(Box::from_raw(tensor));
    }
}

/// Load a model from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ec_model_load(path: *const c_char, out: *mut *mut EcModel) -> EcStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path)?;
        let ckpt = sae::load_checkpoint(&path)?;
        put(out, EcModel(ckpt.model));
        Ok(())
    })
}

/// Latent dimension, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ec_model_latent_dim(model: *const EcModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.latent_dim())
}

/// Encode one tensor into `latent`, which holds `capacity` doubles. Models are
/// read-only here, so one handle may be shared across threads.
///
/// # Safety
/// `model` and `tensor` must be live handles and `latent` must point to
/// `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ec_model_encode(
    model: *const EcModel,
    tensor: *const EcTensor,
    latent: *mut f64,
    capacity: usize,
) -> EcStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(tensor, "tensor")?;
        non_null(latent, "latent")?;
        let m = &(*model).0;
        if capacity < m.latent_dim() {
            return Err(Failure::new(
                EcStatus::BufferTooSmall,
                format!("need {} latent values", m.latent_dim()),
            ));
        }
        let z = m.encode(&(*tensor).0)?.z;
        ptr::copy_nonoverlapping(z.as_ptr(), latent, z.len());
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ec_model_free(model: *mut EcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
