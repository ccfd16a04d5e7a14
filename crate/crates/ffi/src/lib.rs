//! C ABI over the modswap core.
//!
//! Every fallible call returns an [`MsStatus`]; on failure the message is
//! kept per thread and can be copied out with [`ms_last_error_message`].
//! Models and indexes are opaque handles owned by the caller and released
//! with their `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use modswap::cca::CcaModel;
use modswap::costs::{self, CostParams};
use modswap::ingest::Viewport;
use modswap::retrieval::{RetrievalIndex, Retriever, SearchSpace};
use modswap::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    MissingFile = 3,
    BadFormat = 4,
    LengthMismatch = 5,
    EmptyIndex = 6,
    BufferTooSmall = 7,
    Io = 8,
    Panic = 9,
}

/// Search space for [`ms_nearest_text`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsSpace {
    Text = 0,
    Subspace = 1,
}

/// Fitted correlated-subspace model.
pub struct MsModel {
    inner: CcaModel,
}

/// Candidate text rows for retrieval.
pub struct MsIndex {
    inner: RetrievalIndex,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> MsStatus {
    match err.root() {
        Error::MissingFile(_) => MsStatus::MissingFile,
        Error::Format { .. } | Error::Json { .. } | Error::SchemaViolation { .. } => MsStatus::BadFormat,
        Error::LengthMismatch { .. } => MsStatus::LengthMismatch,
        Error::EmptyIndex => MsStatus::EmptyIndex,
        Error::Io { .. } => MsStatus::Io,
        _ => MsStatus::InvalidArgument,
    }
}

fn fail(status: MsStatus, msg: &str) -> MsStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Result<(), MsStatus>) -> MsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MsStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(MsStatus::Panic, "internal panic"),
    }
}

fn lift(err: Error) -> MsStatus {
    fail(status_of(&err), &err.to_string())
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, MsStatus> {
    if p.is_null() {
        return Err(fail(MsStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(MsStatus::InvalidArgument, "path is not utf-8"))
}

unsafe fn in_slice<'a>(p: *const f64, len: usize) -> Result<&'a [f64], MsStatus> {
    if p.is_null() {
        return Err(fail(MsStatus::NullPointer, "input buffer is null"));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, needed: usize) -> Result<&'a mut [f64], MsStatus> {
    if p.is_null() {
        return Err(fail(MsStatus::NullPointer, "output buffer is null"));
    }
    if len < needed {
        return Err(fail(MsStatus::BufferTooSmall, &format!("output needs {needed} values, got {len}")));
    }
    Ok(slice::from_raw_parts_mut(p, needed))
}

unsafe fn out_ref<'a, T>(p: *mut T) -> Result<&'a mut T, MsStatus> {
    p.as_mut().ok_or_else(|| fail(MsStatus::NullPointer, "output pointer is null"))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, MsStatus> {
    p.as_ref().ok_or_else(|| fail(MsStatus::NullPointer, "handle is null"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ms_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf`, truncating
/// if needed. Returns the length the full message needs, including the
/// terminating NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ms_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let bytes = e.borrow();
        let bytes = bytes.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = (bytes.len() - 1).min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Load a model file written by `modswap fit`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_model_load(path: *const c_char, out: *mut *mut MsModel) -> MsStatus {
    guard(|| {
        let out = out_ref(out)?;
        *out = ptr::null_mut();
        let model = CcaModel::load(&path_arg(path)?).map_err(lift)?;
        *out = Box::into_raw(Box::new(MsModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`ms_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_model_free(model: *mut MsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Subspace dimension and the two input feature lengths.
///
/// # Safety
/// `model` must be a live handle; the outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ms_model_dims(
    model: *const MsModel,
    d: *mut usize,
    text_dim: *mut usize,
    image_dim: *mut usize,
) -> MsStatus {
    guard(|| {
        let m = &handle(model)?.inner;
        *out_ref(d)? = m.d();
        *out_ref(text_dim)? = m.text_dim();
        *out_ref(image_dim)? = m.image_dim();
        Ok(())
    })
}

/// Copy the `d` canonical correlations, descending.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ms_model_correlations(model: *const MsModel, out: *mut f64, len: usize) -> MsStatus {
    guard(|| {
        let m = &handle(model)?.inner;
        out_slice(out, len, m.d())?.copy_from_slice(m.canonical_correlations());
        Ok(())
    })
}

unsafe fn map_vector(
    model: *const MsModel,
    input: *const f64,
    input_len: usize,
    out: *mut f64,
    out_len: usize,
    f: impl FnOnce(&CcaModel, &[f64]) -> modswap::Result<Vec<f64>>,
) -> MsStatus {
    guard(|| {
        let m = &handle(model)?.inner;
        let x = in_slice(input, input_len)?;
        let y = f(m, x).map_err(lift)?;
        out_slice(out, out_len, y.len())?.copy_from_slice(&y);
        Ok(())
    })
}

/// Project raw text features (length `text_dim`) to `d` subspace coordinates.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn ms_model_project_text(
    model: *const MsModel,
    text: *const f64,
    text_len: usize,
    out: *mut f64,
    out_len: usize,
) -> MsStatus {
    map_vector(model, text, text_len, out, out_len, |m, x| m.project_text(x))
}

/// Project raw image features (length `image_dim`) to `d` subspace coordinates.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn ms_model_project_image(
    model: *const MsModel,
    image: *const f64,
    image_len: usize,
    out: *mut f64,
    out_len: usize,
) -> MsStatus {
    map_vector(model, image, image_len, out, out_len, |m, x| m.project_image(x))
}

/// Map raw image features into standardized text-feature space (length `text_dim`).
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn ms_model_back_project(
    model: *const MsModel,
    image: *const f64,
    image_len: usize,
    out: *mut f64,
    out_len: usize,
) -> MsStatus {
    map_vector(model, image, image_len, out, out_len, |m, x| Retriever::new(m).back_project(x))
}

/// Load an index file written by `modswap fit --index-out` or the pipeline.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_index_load(path: *const c_char, out: *mut *mut MsIndex) -> MsStatus {
    guard(|| {
        let out = out_ref(out)?;
        *out = ptr::null_mut();
        let index = RetrievalIndex::load(&path_arg(path)?).map_err(lift)?;
        *out = Box::into_raw(Box::new(MsIndex { inner: index }));
        Ok(())
    })
}

/// # Safety
/// `index` must be null or a handle from [`ms_index_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_index_free(index: *mut MsIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// # Safety
/// `index` must be a live handle and `len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_index_len(index: *const MsIndex, len: *mut usize) -> MsStatus {
    guard(|| {
        *out_ref(len)? = handle(index)?.inner.len();
        Ok(())
    })
}

/// Copy the element id of candidate `row` as a NUL-terminated string.
/// Returns `BufferTooSmall` (writing nothing) if `len` cannot hold it.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ms_index_element_id(index: *const MsIndex, row: usize, buf: *mut c_char, len: usize) -> MsStatus {
    guard(|| {
        let refs = handle(index)?.inner.refs();
        let r = refs
            .get(row)
            .ok_or_else(|| fail(MsStatus::InvalidArgument, &format!("row {row} out of range")))?;
        if buf.is_null() {
            return Err(fail(MsStatus::NullPointer, "buffer is null"));
        }
        let id = r.element_id.as_bytes();
        if len < id.len() + 1 {
            return Err(fail(MsStatus::BufferTooSmall, &format!("id needs {} bytes", id.len() + 1)));
        }
        ptr::copy_nonoverlapping(id.as_ptr().cast(), buf, id.len());
        *buf.add(id.len()) = 0;
        Ok(())
    })
}

/// Fixation index recorded for candidate `row`.
///
/// # Safety
/// `index` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_index_fixation_index(index: *const MsIndex, row: usize, out: *mut u32) -> MsStatus {
    guard(|| {
        let r = handle(index)?
            .inner
            .refs()
            .get(row)
            .ok_or_else(|| fail(MsStatus::InvalidArgument, &format!("row {row} out of range")))?;
        *out_ref(out)? = r.fixation_index;
        Ok(())
    })
}

/// Rank the `k` nearest candidate texts for one image query. Writes up to
/// `k` candidate rows and distances and the number written to `count`.
///
/// # Safety
/// `image` must hold `image_len` doubles; `rows` and `distances` must each
/// hold `k` entries; `count` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ms_nearest_text(
    model: *const MsModel,
    index: *const MsIndex,
    image: *const f64,
    image_len: usize,
    k: usize,
    space: MsSpace,
    rows: *mut usize,
    distances: *mut f64,
    count: *mut usize,
) -> MsStatus {
    guard(|| {
        let m = &handle(model)?.inner;
        let idx = &handle(index)?.inner;
        let q = in_slice(image, image_len)?;
        let count = out_ref(count)?;
        *count = 0;
        if k == 0 {
            return Err(fail(MsStatus::InvalidArgument, "k must be positive"));
        }
        if rows.is_null() || distances.is_null() {
            return Err(fail(MsStatus::NullPointer, "output buffer is null"));
        }
        let space = match space {
            MsSpace::Text => SearchSpace::TextSpace,
            MsSpace::Subspace => SearchSpace::Subspace,
        };
        let ranked = Retriever::new(m).nearest_text(idx, q, k, space).map_err(lift)?;
        let rows = slice::from_raw_parts_mut(rows, k);
        let distances = slice::from_raw_parts_mut(distances, k);
        let refs = idx.refs();
        for (j, hit) in ranked.hits.iter().enumerate() {
            rows[j] = refs.iter().position(|r| *r == hit.element).expect("hit comes from the index");
            distances[j] = hit.distance;
        }
        *count = ranked.hits.len();
        Ok(())
    })
}

/// Kilobytes of text filling a `width`×`height` screen with `font_px` square glyphs.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_screen_text_cost_kb(
    width: u32,
    height: u32,
    font_px: u32,
    bytes_per_char: u32,
    formatting_bytes_per_char: u32,
    out: *mut f64,
) -> MsStatus {
    guard(|| {
        let params = CostParams {
            viewport: Viewport {
                width_px: width,
                height_px: height,
            },
            font_px,
            bytes_per_char,
            formatting_bytes_per_char,
            ..CostParams::default()
        };
        params.validate().map_err(lift)?;
        *out_ref(out)? = costs::screen_text_cost_kb(&params);
        Ok(())
    })
}

/// Percentage saved by replacing `replaced_kb` of content with `text_kb` of text.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_saving_pct(replaced_kb: f64, text_kb: f64, out: *mut f64) -> MsStatus {
    guard(|| {
        *out_ref(out)? = costs::saving_pct(replaced_kb, text_kb).map_err(lift)?;
        Ok(())
    })
}

/// Seconds to transfer `kb` kilobytes at `kbps` kilobits per second.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_render_time_s(kb: f64, kbps: f64, out: *mut f64) -> MsStatus {
    guard(|| {
        *out_ref(out)? = costs::render_time_s(kb, kbps).map_err(lift)?;
        Ok(())
    })
}
