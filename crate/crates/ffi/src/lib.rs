//! C ABI over `mvfuse`. Objects cross the boundary as opaque handles that
//! must be released with their `*_free` function. Every fallible call
//! returns an [`MvStatus`]; on failure the message is available from
//! [`mv_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mvfuse::diffusion::{ConditionVector, JitteredOracleDenoiser, NoiseSchedule};
use mvfuse::geometry::{make_orbit_cameras, CameraPose};
use mvfuse::gsplat::{render_views, GaussianCloud, Image};
use mvfuse::metrics::{self, FlowParams};
use mvfuse::recon::{reconstruct, ReconConfig};
use mvfuse::sampler::{identity_codec, sample_3d_aware, sample_plain, LatentCodec, SamplerConfig};
use mvfuse::scenes::{generate_scene, scene_latents, SceneSpec};
use mvfuse::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MvStatus {
    Ok = 0,
    InvalidArgument = 1,
    FileError = 2,
    ParseError = 3,
    UndefinedMetric = 4,
    NullPointer = 5,
    Panic = 6,
}

/// Camera list.
pub struct MvCameras(Vec<CameraPose>);

/// Gaussian cloud.
pub struct MvCloud(GaussianCloud);

/// Image list; pixels are RGB doubles in `[0, 1]`.
pub struct MvImages(Vec<Image>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MvStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MvStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            MvStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            let status = match &e {
                Error::InvalidArgument(_) => MvStatus::InvalidArgument,
                Error::File { .. } => MvStatus::FileError,
                Error::Parse { .. } => MvStatus::ParseError,
                Error::UndefinedMetric(_) => MvStatus::UndefinedMetric,
            };
            set_error(e.to_string());
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MvStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidArgument(format!("{what} is not UTF-8"))))
}

unsafe fn read_background(p: *const f64) -> [f64; 3] {
    if p.is_null() {
        [0.5; 3]
    } else {
        [*p, *p.add(1), *p.add(2)]
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

/// Copy of the last error message on this thread, or null. Free with
/// [`mv_string_free`].
#[no_mangle]
pub extern "C" fn mv_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(c) => c.clone().into_raw(),
        None => ptr::null_mut(),
    })
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mv_orbit_cameras(
    n: usize,
    elevation_deg: f64,
    radius: f64,
    fov_deg: f64,
    width: usize,
    height: usize,
    out: *mut *mut MvCameras,
) -> MvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cams = make_orbit_cameras(n, elevation_deg, radius, fov_deg, width, height)?;
        *out = Box::into_raw(Box::new(MvCameras(cams)));
        Ok(())
    })
}

/// # Safety
/// `cams` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mv_cameras_len(cams: *const MvCameras) -> usize {
    cams.as_ref().map_or(0, |c| c.0.len())
}

/// # Safety
/// `cams` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn mv_cameras_free(cams: *mut MvCameras) {
    if !cams.is_null() {
        drop(Box::from_raw(cams));
    }
}

/// Generates a scene of `kind` ("blob-cluster", "ring" or "box-stack")
/// with the default palette.
///
/// # Safety
/// `kind` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mv_scene_generate(
    kind: *const c_char,
    n_primitives: usize,
    seed: u64,
    out: *mut *mut MvCloud,
) -> MvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let kind = c_str(kind, "kind")?.parse()?;
        let cloud = generate_scene(&SceneSpec::new(kind, n_primitives, seed))?;
        *out = Box::into_raw(Box::new(MvCloud(cloud)));
        Ok(())
    })
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mv_cloud_from_json(json: *const c_char, out: *mut *mut MvCloud) -> MvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cloud: GaussianCloud = serde_json::from_str(c_str(json, "json")?)
            .map_err(|e| Error::InvalidArgument(format!("bad cloud JSON: {e}")))?;
        *out = Box::into_raw(Box::new(MvCloud(cloud)));
        Ok(())
    })
}

/// Serializes a cloud; free the string with [`mv_string_free`].
///
/// # Safety
/// `cloud` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mv_cloud_to_json(cloud: *const MvCloud, out: *mut *mut c_char) -> MvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cloud = deref(cloud, "cloud")?;
        let s = serde_json::to_string(&cloud.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        *out = into_c_string(s);
        Ok(())
    })
}

/// # Safety
/// `cloud` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mv_cloud_len(cloud: *const MvCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.0.len())
}

/// # Safety
/// `cloud` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mv_cloud_free(cloud: *mut MvCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Renders `cloud` at every camera. A null `background` means mid gray;
/// otherwise it points at three doubles.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mv_render(
    cloud: *const MvCloud,
    cams: *const MvCameras,
    background: *const f64,
    out: *mut *mut MvImages,
) -> MvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (cloud, cams) = (deref(cloud, "cloud")?, deref(cams, "cams")?);
        let images = render_views(&cloud.0, &cams.0, read_background(background));
        *out = Box::into_raw(Box::new(MvImages(images)));
        Ok(())
    })
}

/// # Safety
/// `images` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mv_images_len(images: *const MvImages) -> usize {
    images.as_ref().map_or(0, |i| i.0.len())
}

/// Width and height of view `index`.
///
/// # Safety
/// `images` must be live; `width` and `height` valid.
#[no_mangle]
pub unsafe extern "C" fn mv_images_size(
    images: *const MvImages,
    index: usize,
    width: *mut usize,
    height: *mut usize,
) -> MvStatus {
    guard(|| {
        let img = view(deref(images, "images")?, index)?;
        *out_ptr(width, "width")? = img.width;
        *out_ptr(height, "height")? = img.height;
        Ok(())
    })
}

fn view(images: &MvImages, index: usize) -> Result<&Image, Failure> {
    images
        .0
        .get(index)
        .ok_or_else(|| Failure::Lib(Error::InvalidArgument(format!("view {index} out of range"))))
}

/// Copies view `index` as row-major RGB doubles into `buf`, which must hold
/// exactly `width * height * 3` values.
///
/// # Safety
/// `buf` must point at `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mv_images_copy_view(
    images: *const MvImages,
    index: usize,
    buf: *mut f64,
    len: usize,
) -> MvStatus {
    guard(|| {
        let img = view(deref(images, "images")?, index)?;
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        if len != img.pixels.len() * 3 {
            return Err(Error::InvalidArgument(format!("buffer holds {len} values, need {}", img.pixels.len() * 3)).into());
        }
        let dst = std::slice::from_raw_parts_mut(buf, len);
        for (d, p) in dst.chunks_exact_mut(3).zip(&img.pixels) {
            d.copy_from_slice(p);
        }
        Ok(())
    })
}

/// # Safety
/// `images` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mv_images_free(images: *mut MvImages) {
    if !images.is_null() {
        drop(Box::from_raw(images));
    }
}

/// Fuses views into a cloud on a `res`³ grid with the default thresholds.
///
/// # Safety
/// Handles must be live and `out` valid; `background` may be null.
#[no_mangle]
pub unsafe extern "C" fn mv_reconstruct(
    images: *const MvImages,
    cams: *const MvCameras,
    res: usize,
    background: *const f64,
    out: *mut *mut MvCloud,
) -> MvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (images, cams) = (deref(images, "images")?, deref(cams, "cams")?);
        let cfg = ReconConfig {
            res,
            background: read_background(background),
            ..Default::default()
        };
        let cloud = reconstruct(&images.0, &cams.0, &cfg)?;
        *out = Box::into_raw(Box::new(MvCloud(cloud)));
        Ok(())
    })
}

/// Samples views of `scene` through a jittered oracle denoiser (`gamma` 0
/// is exact) with the identity codec and default substitution settings.
/// With `aware` set and `out_cloud` non-null, the fused model is returned
/// there.
///
/// # Safety
/// Handles must be live, `out_images` valid, `out_cloud` valid or null.
#[no_mangle]
pub unsafe extern "C" fn mv_sample(
    scene: *const MvCloud,
    cams: *const MvCameras,
    aware: bool,
    gamma: f64,
    n_steps: usize,
    seed: u64,
    out_images: *mut *mut MvImages,
    out_cloud: *mut *mut MvCloud,
) -> MvStatus {
    guard(|| {
        let out_images = out_ptr(out_images, "out_images")?;
        let (scene, cams) = (deref(scene, "scene")?, deref(cams, "cams")?);
        let cfg = SamplerConfig {
            n_steps,
            seed,
            ..Default::default()
        };
        let codec = identity_codec();
        let sched = NoiseSchedule::default();
        let z0 = scene_latents(&scene.0, &cams.0, &codec, cfg.background)?;
        let den = JitteredOracleDenoiser::new(&z0, gamma, seed, sched.clone())?;
        let y = ConditionVector::default();
        let (z, cloud) = if aware {
            let (z, c, _) = sample_3d_aware(&den, &cams.0, &y, &sched, &cfg, &ReconConfig::default(), None)?;
            (z, Some(c))
        } else {
            (sample_plain(&den, &cams.0, &y, &sched, &cfg, None)?.0, None)
        };
        *out_images = Box::into_raw(Box::new(MvImages(codec.decode(&z)?)));
        if let (Some(c), Some(slot)) = (cloud, out_cloud.as_mut()) {
            *slot = Box::into_raw(Box::new(MvCloud(c)));
        }
        Ok(())
    })
}

/// Mean per-view PSNR.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mv_psnr(a: *const MvImages, b: *const MvImages, out: *mut f64) -> MvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = metrics::mean_over_views(&deref(a, "a")?.0, &deref(b, "b")?.0, metrics::psnr)?;
        Ok(())
    })
}

/// Mean per-view SSIM.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mv_ssim(a: *const MvImages, b: *const MvImages, out: *mut f64) -> MvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = metrics::mean_over_views(&deref(a, "a")?.0, &deref(b, "b")?.0, metrics::ssim)?;
        Ok(())
    })
}

/// Cyclic flow-warp RMSE at `interval`; `background` may be null.
///
/// # Safety
/// `images` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mv_warp_rmse(
    images: *const MvImages,
    interval: usize,
    background: *const f64,
    out: *mut f64,
) -> MvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let params = FlowParams::with_background(read_background(background));
        *out = metrics::warp_rmse(&deref(images, "images")?.0, interval, &params)?;
        Ok(())
    })
}
