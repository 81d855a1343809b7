//! C ABI over `hiersr`.
//!
//! Volumes and trees are opaque handles owned by the caller and released with
//! the matching `*_free`. Every fallible call returns an [`HsrStatus`]; on
//! failure [`hsr_last_error`] describes the problem for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hiersr::hier_sr::{blockwise_upscale, hierarchical_downscale, hierarchical_upscale};
use hiersr::io::{read_tree, read_volume, write_tree, write_volume};
use hiersr::metrics::{psnr, ssim, SsimParams};
use hiersr::octree::{build_sr_octree, BuildConfig, SrOctree};
use hiersr::resample::{Downscaler, UpscalerHierarchy};
use hiersr::{Error, Volume};

/// Opaque volume handle.
pub struct HsrVolume(Volume);

/// Opaque SR-octree handle.
pub struct HsrTree(SrOctree);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HsrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Format = 5,
    Invariant = 6,
    Backend = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HsrDownscaler {
    MeanPool = 0,
    Subsample = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HsrBackend {
    Nearest = 0,
    Linear = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HsrBuildConfig {
    pub epsilon: f64,
    pub min_chunk: usize,
    pub min_level: u32,
    pub max_level: u32,
    pub downscaler: HsrDownscaler,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HsrStatus {
    match e {
        Error::Io(_) => HsrStatus::Io,
        Error::ShapeMismatch { .. }
        | Error::LengthMismatch { .. }
        | Error::OddDimension { .. }
        | Error::IndivisibleDimension { .. }
        | Error::TooSmallForWindow { .. } => HsrStatus::ShapeMismatch,
        Error::BadMagic
        | Error::VersionUnsupported(_)
        | Error::CorruptHeader(_)
        | Error::HeaderPayloadMismatch(_)
        | Error::UnsupportedElementType(_) => HsrStatus::Format,
        Error::InvariantViolation(_) | Error::OrphanSingleVoxel { .. } => HsrStatus::Invariant,
        Error::ConnectFailed(_)
        | Error::HandshakeTimeout
        | Error::ProtocolViolation(_)
        | Error::ServerError(_)
        | Error::Timeout
        | Error::PayloadTooLarge { .. }
        | Error::BadSpec(_) => HsrStatus::Backend,
        _ => HsrStatus::InvalidArgument,
    }
}

struct Fail(HsrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HsrStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HsrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HsrStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            HsrStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Fail(HsrStatus::InvalidArgument, "path is not UTF-8".into()))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn hierarchy(b: HsrBackend) -> UpscalerHierarchy {
    match b {
        HsrBackend::Nearest => UpscalerHierarchy::nearest(),
        HsrBackend::Linear => UpscalerHierarchy::linear(),
    }
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn hsr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copies `len` floats from `data` into a new volume of shape `dims[0..ndim]`
/// (row-major, last axis fastest).
///
/// # Safety
/// `dims` must point to `ndim` values and `data` to `len` floats.
#[no_mangle]
pub unsafe extern "C" fn hsr_volume_new(
    dims: *const usize,
    ndim: usize,
    data: *const f32,
    len: usize,
    out: *mut *mut HsrVolume,
) -> HsrStatus {
    guard(|| {
        if dims.is_null() || data.is_null() {
            return Err(null("dims/data"));
        }
        let dims = std::slice::from_raw_parts(dims, ndim).to_vec();
        let data = std::slice::from_raw_parts(data, len).to_vec();
        put(out, HsrVolume(Volume::new(dims, data)?))
    })
}

/// # Safety
/// `v` must come from this library and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn hsr_volume_free(v: *mut HsrVolume) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

/// Number of axes (2 or 3); 0 for NULL.
///
/// # Safety
/// `v` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn hsr_volume_ndim(v: *const HsrVolume) -> usize {
    v.as_ref().map_or(0, |v| v.0.ndim())
}

/// Voxel count; 0 for NULL.
///
/// # Safety
/// `v` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn hsr_volume_len(v: *const HsrVolume) -> usize {
    v.as_ref().map_or(0, |v| v.0.len())
}

/// Writes the shape into `out[0..cap]`; `cap` must be at least the ndim.
///
/// # Safety
/// `out` must have room for `cap` values.
#[no_mangle]
pub unsafe extern "C" fn hsr_volume_dims(
    v: *const HsrVolume,
    out: *mut usize,
    cap: usize,
) -> HsrStatus {
    guard(|| {
        let v = deref(v, "volume")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if cap < v.0.ndim() {
            return Err(Fail(
                HsrStatus::InvalidArgument,
                format!("need {} slots, got {cap}", v.0.ndim()),
            ));
        }
        std::slice::from_raw_parts_mut(out, v.0.ndim()).copy_from_slice(v.0.dims());
        Ok(())
    })
}

/// Copies the voxels into `out`, which must hold exactly `len` floats.
///
/// # Safety
/// `out` must have room for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn hsr_volume_copy_data(
    v: *const HsrVolume,
    out: *mut f32,
    len: usize,
) -> HsrStatus {
    guard(|| {
        let v = deref(v, "volume")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if len != v.0.len() {
            return Err(Fail(
                HsrStatus::ShapeMismatch,
                format!("buffer holds {len} floats, volume has {}", v.0.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(v.0.data());
        Ok(())
    })
}

/// Reads a `.hvol` header and its payload.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hsr_volume_read(
    path_: *const c_char,
    out: *mut *mut HsrVolume,
) -> HsrStatus {
    guard(|| put(out, HsrVolume(read_volume(path(path_)?)?)))
}

/// # Safety
/// `v` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hsr_volume_write(v: *const HsrVolume, path_: *const c_char) -> HsrStatus {
    guard(|| Ok(write_volume(path(path_)?, &deref(v, "volume")?.0)?))
}

/// # Safety
/// `v` and `cfg` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hsr_tree_build(
    v: *const HsrVolume,
    cfg: *const HsrBuildConfig,
    out: *mut *mut HsrTree,
) -> HsrStatus {
    guard(|| {
        let v = deref(v, "volume")?;
        let c = deref(cfg, "config")?;
        let cfg = BuildConfig {
            epsilon: c.epsilon,
            min_chunk: c.min_chunk,
            min_level: c.min_level,
            max_level: c.max_level,
            downscaler: match c.downscaler {
                HsrDownscaler::MeanPool => Downscaler::MeanPool,
                HsrDownscaler::Subsample => Downscaler::Subsample,
            },
        };
        cfg.validate()?;
        put(out, HsrTree(build_sr_octree(&v.0, &cfg)?))
    })
}

/// # Safety
/// `t` must come from this library and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn hsr_tree_free(t: *mut HsrTree) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hsr_tree_read(path_: *const c_char, out: *mut *mut HsrTree) -> HsrStatus {
    guard(|| put(out, HsrTree(read_tree(path(path_)?)?)))
}

/// # Safety
/// `t` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hsr_tree_write(t: *const HsrTree, path_: *const c_char) -> HsrStatus {
    guard(|| Ok(write_tree(path(path_)?, &deref(t, "tree")?.0)?))
}

/// Full-resolution voxels per stored voxel; 0 for NULL.
///
/// # Safety
/// `t` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn hsr_tree_reduction_factor(t: *const HsrTree) -> f64 {
    t.as_ref().map_or(0.0, |t| t.0.reduction_factor())
}

/// Coarsest leaf level; 0 for NULL.
///
/// # Safety
/// `t` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn hsr_tree_max_level(t: *const HsrTree) -> u32 {
    t.as_ref().map_or(0, |t| t.0.max_level())
}

/// # Safety
/// `t` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hsr_hierarchical_downscale(
    t: *const HsrTree,
    out: *mut *mut HsrVolume,
) -> HsrStatus {
    guard(|| {
        put(
            out,
            HsrVolume(hierarchical_downscale(&deref(t, "tree")?.0)?),
        )
    })
}

/// Upscales `lr` (the tree's coarsest uniform grid) back to full resolution.
///
/// # Safety
/// `lr` and `t` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn hsr_hierarchical_upscale(
    lr: *const HsrVolume,
    t: *const HsrTree,
    backend: HsrBackend,
    out: *mut *mut HsrVolume,
) -> HsrStatus {
    guard(|| {
        let lr = deref(lr, "lr")?;
        let t = deref(t, "tree")?;
        put(
            out,
            HsrVolume(hierarchical_upscale(&lr.0, &t.0, &mut hierarchy(backend))?),
        )
    })
}

/// # Safety
/// `t` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hsr_blockwise_upscale(
    t: *const HsrTree,
    backend: HsrBackend,
    out: *mut *mut HsrVolume,
) -> HsrStatus {
    guard(|| {
        put(
            out,
            HsrVolume(blockwise_upscale(
                &deref(t, "tree")?.0,
                &mut hierarchy(backend),
            )?),
        )
    })
}

/// # Safety
/// `a` and `b` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hsr_psnr(
    a: *const HsrVolume,
    b: *const HsrVolume,
    data_range: f64,
    out: *mut f64,
) -> HsrStatus {
    guard(|| {
        let v = psnr(&deref(a, "a")?.0, &deref(b, "b")?.0, data_range)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// # Safety
/// `a` and `b` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hsr_ssim(
    a: *const HsrVolume,
    b: *const HsrVolume,
    data_range: f64,
    out: *mut f64,
) -> HsrStatus {
    guard(|| {
        let v = ssim(
            &deref(a, "a")?.0,
            &deref(b, "b")?.0,
            &SsimParams::with_range(data_range),
        )?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}
