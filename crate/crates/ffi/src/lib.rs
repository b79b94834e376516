//! C ABI over the `alignfuse` library.
//!
//! Objects cross the boundary as opaque handles created by `af_*_new` /
//! `af_*_load` and released with the matching `af_*_free`. Every fallible
//! call returns an [`AfStatus`]; on failure [`af_last_error`] describes the
//! cause for the calling thread. Panics are caught and reported as
//! [`AfStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use alignfuse::cli::{cmd_pipeline, RunConfig};
use alignfuse::fusion::{deform_cafa, make_dropout_mask, CafaShape, DeformCafaParams};
use alignfuse::geometry::{select_camera, CameraRig};
use alignfuse::tensor::{bilinear_sample, FeatureMap};
use alignfuse::voxel::{voxelize, PointCloud, VoxelConfig, VoxelSet};
use alignfuse::Error;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Evaluation = 3,
    Config = 4,
    Format = 5,
    Generation = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

fn status_of(e: &Error) -> AfStatus {
    match e {
        Error::InvalidInput(_) => AfStatus::InvalidInput,
        Error::Evaluation(_) => AfStatus::Evaluation,
        Error::Config { .. } => AfStatus::Config,
        Error::Format(_) => AfStatus::Format,
        Error::Generation(_) => AfStatus::Generation,
        Error::Stage { source, .. } => status_of(source),
        Error::Io { .. } => AfStatus::Io,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(AfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(AfStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording the error message and mapping panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AfStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            AfStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn path(ptr: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Fail(AfStatus::InvalidInput, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Fail> {
    ptr.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn copy_out(src: &[f64], out: &mut [f64]) -> Result<(), Fail> {
    if out.len() < src.len() {
        return Err(Fail(
            AfStatus::BufferTooSmall,
            format!("buffer holds {} values, {} needed", out.len(), src.len()),
        ));
    }
    out[..src.len()].copy_from_slice(src);
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next `af_*` call on the same thread.
#[no_mangle]
pub extern "C" fn af_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn af_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- fusion parameters ------------------------------------------------------

/// Opaque deformable-attention parameter set.
pub struct AfParams(DeformCafaParams);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AfCafaShape {
    pub heads: usize,
    pub points: usize,
    pub image_dim: usize,
    pub voxel_dim: usize,
    pub token_dim: usize,
    pub head_dim: usize,
}

/// Freshly initialized parameters: `M = 4`, `K = 8`, zero offset and
/// attention layers, seeded random elsewhere.
///
/// # Safety
/// `out` must be a valid pointer to write a handle into.
#[no_mangle]
pub unsafe extern "C" fn af_params_new(image_dim: usize, voxel_dim: usize, seed: u64, out: *mut *mut AfParams) -> AfStatus {
    guard(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = DeformCafaParams::init(CafaShape::standard(image_dim, voxel_dim), &mut rng)?;
        put(out, AfParams(p))
    })
}

/// Single head, zero offsets, uniform attention, identity value path.
///
/// # Safety
/// `out` must be a valid pointer to write a handle into.
#[no_mangle]
pub unsafe extern "C" fn af_params_passthrough(
    image_dim: usize,
    voxel_dim: usize,
    points: usize,
    out: *mut *mut AfParams,
) -> AfStatus {
    guard(|| put(out, AfParams(DeformCafaParams::passthrough(image_dim, voxel_dim, points)?)))
}

/// # Safety
/// `file` must be a NUL-terminated path, `out` a valid handle pointer.
#[no_mangle]
pub unsafe extern "C" fn af_params_load(file: *const c_char, out: *mut *mut AfParams) -> AfStatus {
    guard(|| put(out, AfParams(DeformCafaParams::load(&path(file, "path")?)?)))
}

/// # Safety
/// `params` must be a live handle, `file` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn af_params_save(params: *const AfParams, file: *const c_char) -> AfStatus {
    guard(|| Ok(handle(params, "params")?.0.save(&path(file, "path")?)?))
}

/// # Safety
/// `params` must be a live handle and `shape` writable.
#[no_mangle]
pub unsafe extern "C" fn af_params_shape(params: *const AfParams, shape: *mut AfCafaShape) -> AfStatus {
    guard(|| {
        let s = handle(params, "params")?.0.shape;
        let out = shape.as_mut().ok_or_else(|| null("shape"))?;
        *out = AfCafaShape {
            heads: s.heads,
            points: s.points,
            image_dim: s.image_dim,
            voxel_dim: s.voxel_dim,
            token_dim: s.token_dim,
            head_dim: s.head_dim,
        };
        Ok(())
    })
}

/// # Safety
/// `params` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn af_params_free(params: *mut AfParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

// ---- feature maps -----------------------------------------------------------

/// Opaque channels-last `height x width x channels` map.
pub struct AfFeatureMap(FeatureMap);

/// Copies `height * width * channels` values (row-major, channels last).
///
/// # Safety
/// `data` must point to that many doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn af_feature_map_new(
    height: usize,
    width: usize,
    channels: usize,
    data: *const f64,
    out: *mut *mut AfFeatureMap,
) -> AfStatus {
    guard(|| {
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Fail(AfStatus::InvalidInput, "map size overflows".into()))?;
        let values = slice(data, n, "data")?.to_vec();
        put(out, AfFeatureMap(FeatureMap::new(height, width, channels, values)?))
    })
}

/// # Safety
/// `file` must be a NUL-terminated path, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn af_feature_map_load(file: *const c_char, out: *mut *mut AfFeatureMap) -> AfStatus {
    guard(|| put(out, AfFeatureMap(FeatureMap::load(&path(file, "path")?)?)))
}

/// Writes `[height, width, channels]` into `dims`.
///
/// # Safety
/// `map` must be a live handle, `dims` must hold 3 values.
#[no_mangle]
pub unsafe extern "C" fn af_feature_map_dims(map: *const AfFeatureMap, dims: *mut usize) -> AfStatus {
    guard(|| {
        let m = &handle(map, "map")?.0;
        slice_mut(dims, 3, "dims")?.copy_from_slice(&[m.height(), m.width(), m.channels()]);
        Ok(())
    })
}

/// # Safety
/// `map` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn af_feature_map_free(map: *mut AfFeatureMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Zero-padded bilinear sample at column `x`, row `y`; writes `channels`
/// values.
///
/// # Safety
/// `map` must be live; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn af_bilinear_sample(
    map: *const AfFeatureMap,
    x: f64,
    y: f64,
    out: *mut f64,
    out_len: usize,
) -> AfStatus {
    guard(|| {
        let v = bilinear_sample(&handle(map, "map")?.0, x, y)?;
        copy_out(&v, slice_mut(out, out_len, "out")?)
    })
}

/// Deformable cross-attention for one voxel. `levels` holds `n_levels` map
/// handles, `refs` holds `2 * n_levels` reference coordinates `(x, y)`.
/// Writes `voxel_dim` values into `out`.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn af_deform_cafa(
    levels: *const *const AfFeatureMap,
    n_levels: usize,
    refs: *const f64,
    voxel_feat: *const f64,
    voxel_len: usize,
    params: *const AfParams,
    out: *mut f64,
    out_len: usize,
) -> AfStatus {
    guard(|| {
        let handles = slice(levels, n_levels, "levels")?;
        // the core API takes owned maps; clone once per call
        let maps = handles
            .iter()
            .map(|h| handle(*h, "level").map(|m| m.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let r = slice(refs, 2 * n_levels, "refs")?;
        let refs: Vec<[f64; 2]> = r.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let v = slice(voxel_feat, voxel_len, "voxel_feat")?;
        let y = deform_cafa(&maps, &refs, v, &handle(params, "params")?.0)?;
        copy_out(&y, slice_mut(out, out_len, "out")?)
    })
}

// ---- camera rig ---------------------------------------------------------------

/// Opaque multi-camera calibration.
pub struct AfRig(CameraRig);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AfProjection {
    /// 1 when some camera sees the point, 0 otherwise (other fields zero).
    pub in_view: i32,
    pub camera_index: u32,
    pub pixel_x: f64,
    pub pixel_y: f64,
    pub depth: f64,
}

/// Ring of `count` yaw-spaced pinhole cameras at the origin.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn af_rig_ring(count: usize, width: usize, height: usize, hfov_deg: f64, out: *mut *mut AfRig) -> AfStatus {
    guard(|| put(out, AfRig(CameraRig::ring(count, width, height, hfov_deg)?)))
}

/// Loads a calibration text file.
///
/// # Safety
/// `file` must be a NUL-terminated path, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn af_rig_load(file: *const c_char, out: *mut *mut AfRig) -> AfStatus {
    guard(|| put(out, AfRig(CameraRig::load(&path(file, "path")?)?)))
}

/// # Safety
/// `rig` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn af_rig_camera_count(rig: *const AfRig) -> usize {
    rig.as_ref().map_or(0, |r| r.0.len())
}

/// First camera in priority order that sees `xyz` (3 doubles, LiDAR frame).
///
/// # Safety
/// `rig` must be live, `xyz` must hold 3 doubles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn af_rig_select_camera(rig: *const AfRig, xyz: *const f64, out: *mut AfProjection) -> AfStatus {
    guard(|| {
        let p = slice(xyz, 3, "xyz")?;
        let hit = select_camera(&handle(rig, "rig")?.0, &[p[0], p[1], p[2]])?;
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = match hit {
            Some(h) => AfProjection {
                in_view: 1,
                camera_index: h.camera_index as u32,
                pixel_x: h.pixel[0],
                pixel_y: h.pixel[1],
                depth: h.depth,
            },
            None => AfProjection::default(),
        };
        Ok(())
    })
}

/// # Safety
/// `rig` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn af_rig_free(rig: *mut AfRig) {
    if !rig.is_null() {
        drop(Box::from_raw(rig));
    }
}

// ---- voxelization -------------------------------------------------------------

/// Opaque set of non-empty voxels.
pub struct AfVoxelSet(VoxelSet);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AfVoxelConfig {
    pub voxel_size: [f64; 3],
    pub range_min: [f64; 3],
    pub range_max: [f64; 3],
}

/// Dynamic voxelization of `n` points. `positions` holds `3 n` doubles,
/// `features` holds `n * feature_dim` doubles.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `config` and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn af_voxelize(
    positions: *const f64,
    features: *const f64,
    n: usize,
    feature_dim: usize,
    config: *const AfVoxelConfig,
    out: *mut *mut AfVoxelSet,
) -> AfStatus {
    guard(|| {
        let pos = slice(positions, 3 * n, "positions")?;
        let feats = slice(features, n * feature_dim, "features")?.to_vec();
        let c = handle(config, "config")?;
        let cloud = PointCloud::from_parts(feature_dim, pos.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect(), feats)?;
        let cfg = VoxelConfig {
            voxel_size: c.voxel_size,
            range_min: c.range_min,
            range_max: c.range_max,
        };
        put(out, AfVoxelSet(voxelize(&cloud, &cfg)?))
    })
}

/// # Safety
/// `set` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn af_voxels_len(set: *const AfVoxelSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// Per-voxel feature width (point features plus 3 offset channels).
///
/// # Safety
/// `set` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn af_voxels_feature_dim(set: *const AfVoxelSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.feature_dim)
}

/// Copies `len * feature_dim` features, voxel-major.
///
/// # Safety
/// `set` must be live and `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn af_voxels_features(set: *const AfVoxelSet, out: *mut f64, out_len: usize) -> AfStatus {
    guard(|| {
        let flat: Vec<f64> = handle(set, "voxels")?.0.voxels.iter().flat_map(|v| v.feature.iter().copied()).collect();
        copy_out(&flat, slice_mut(out, out_len, "out")?)
    })
}

/// Copies `3 * len` voxel centers.
///
/// # Safety
/// `set` must be live and `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn af_voxels_centers(set: *const AfVoxelSet, out: *mut f64, out_len: usize) -> AfStatus {
    guard(|| {
        let flat: Vec<f64> = handle(set, "voxels")?.0.voxels.iter().flat_map(|v| v.center).collect();
        copy_out(&flat, slice_mut(out, out_len, "out")?)
    })
}

/// # Safety
/// `set` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn af_voxels_free(set: *mut AfVoxelSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

// ---- dropout and pipeline -----------------------------------------------------

/// Keeps exactly `keep` of `count` cameras, chosen by `seed`; writes one
/// flag (1 kept, 0 dropped) per camera.
///
/// # Safety
/// `flags` must hold `count` bytes.
#[no_mangle]
pub unsafe extern "C" fn af_dropout_mask(count: usize, keep: usize, seed: u64, flags: *mut u8) -> AfStatus {
    guard(|| {
        let m = make_dropout_mask(count, keep, seed)?;
        let out = slice_mut(flags, count, "flags")?;
        for (o, k) in out.iter_mut().zip(&m.keep) {
            *o = *k as u8;
        }
        Ok(())
    })
}

/// Runs the full pipeline and writes `fused.fvox`, `metrics.json` and
/// `timings.json` into `out_dir`. `config` may be null for defaults.
///
/// # Safety
/// `config` must be null or a NUL-terminated path; `out_dir` likewise non-null.
#[no_mangle]
pub unsafe extern "C" fn af_pipeline_run(config: *const c_char, out_dir: *const c_char, seed: u64) -> AfStatus {
    guard(|| {
        let mut cfg = if config.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_file(&path(config, "config")?)?
        };
        cfg.seed = seed;
        cfg.out = path(out_dir, "out_dir")?;
        cmd_pipeline(&cfg)?;
        Ok(())
    })
}
