//! C interface to `pcim-core`.
//!
//! Every function returns a `PcimStatus`. On failure the message is available
//! through `pcim_last_error_message` on the same thread until the next call.
//! Models are opaque handles created by `pcim_model_load` and released with
//! `pcim_model_free`. Images and maps are row-major `float` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pcim_core::attribution::{attribute, AttributionConfig};
use pcim_core::checkpoint::load_checkpoint;
use pcim_core::eval::{mass_accuracy, rank_accuracy, ssim};
use pcim_core::model::predict;
use pcim_core::{AttributionMap, Error, GroundTruthMask, Image, Method, Model, Network, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PcimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Numeric = 4,
    State = 5,
    Data = 6,
    Format = 7,
    Io = 8,
    UndefinedMetric = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PcimMethod {
    Pcim = 0,
    Saliency = 1,
    Rise = 2,
    GradCam = 3,
    GradCamPp = 4,
    IntGrads = 5,
    Random = 6,
}

impl From<PcimMethod> for Method {
    fn from(m: PcimMethod) -> Self {
        match m {
            PcimMethod::Pcim => Method::Pcim,
            PcimMethod::Saliency => Method::Saliency,
            PcimMethod::Rise => Method::Rise,
            PcimMethod::GradCam => Method::GradCam,
            PcimMethod::GradCamPp => Method::GradCamPp,
            PcimMethod::IntGrads => Method::IntGrads,
            PcimMethod::Random => Method::Random,
        }
    }
}

/// Per-method settings; start from `pcim_attribution_options_default`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PcimAttributionOptions {
    pub pcim_steps: u32,
    pub pcim_learning_rate: f32,
    pub pcim_momentum: f32,
    pub ig_steps: u32,
    pub rise_masks: u32,
    pub rise_seed: u64,
    pub random_seed: u64,
}

/// A frozen classifier.
pub struct PcimModel {
    network: Network,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PcimStatus {
    match e {
        Error::Dimension(_) | Error::Architecture(_) => PcimStatus::Dimension,
        Error::Numeric { .. } => PcimStatus::Numeric,
        Error::State(_) => PcimStatus::State,
        Error::Data(_) | Error::Constraint(_) => PcimStatus::Data,
        Error::Config(_) => PcimStatus::InvalidArgument,
        Error::Format { .. } => PcimStatus::Format,
        Error::Io { .. } => PcimStatus::Io,
        Error::UndefinedMetric(_) => PcimStatus::UndefinedMetric,
    }
}

struct Fail(PcimStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(name: &str) -> Fail {
    Fail(PcimStatus::NullPointer, format!("{name} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(PcimStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any failure and converts panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PcimStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PcimStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            PcimStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{name} is not UTF-8")))
}

unsafe fn model<'a>(m: *const PcimModel) -> Result<&'a PcimModel, Fail> {
    m.as_ref().ok_or_else(|| null("model"))
}

fn image_for(model: &PcimModel, pixels: &[f32]) -> Result<Image, Fail> {
    let (h, w) = model.network.input_dims();
    if pixels.len() != h * w {
        return Err(Fail(
            PcimStatus::Dimension,
            format!("image has {} pixels, the model expects {h}x{w}", pixels.len()),
        ));
    }
    Ok(Image::new(h, w, pixels.to_vec())?)
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn pcim_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn pcim_attribution_options_default() -> PcimAttributionOptions {
    let d = AttributionConfig::default();
    PcimAttributionOptions {
        pcim_steps: d.pcim.steps as u32,
        pcim_learning_rate: d.pcim.learning_rate,
        pcim_momentum: d.pcim.momentum,
        ig_steps: d.ig.steps as u32,
        rise_masks: d.rise.masks as u32,
        rise_seed: d.rise.seed,
        random_seed: d.random_seed,
    }
}

/// Loads a checkpoint directory and freezes the network.
///
/// # Safety
/// `dir` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pcim_model_load(dir: *const c_char, out: *mut *mut PcimModel) -> PcimStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let dir = string(dir, "dir")?;
        let mut network = load_checkpoint(Path::new(dir))?.network;
        network.freeze();
        *out = Box::into_raw(Box::new(PcimModel { network }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `pcim_model_load` and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pcim_model_free(model: *mut PcimModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pcim_model_info(
    model: *const PcimModel,
    height: *mut usize,
    width: *mut usize,
    num_classes: *mut usize,
) -> PcimStatus {
    guard(|| {
        let m = self::model(model)?;
        if height.is_null() || width.is_null() || num_classes.is_null() {
            return Err(null("output"));
        }
        let (h, w) = m.network.input_dims();
        *height = h;
        *width = w;
        *num_classes = m.network.num_classes();
        Ok(())
    })
}

/// Writes the 64-character hex SHA-256 of the weights and a nul into `buf`,
/// which must hold at least 65 bytes.
///
/// # Safety
/// `buf` must be writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pcim_model_checksum(model: *const PcimModel, buf: *mut c_char, len: usize) -> PcimStatus {
    guard(|| {
        let m = self::model(model)?;
        let sum = m.network.checksum();
        let out = slice_mut(buf as *mut u8, len, "buf")?;
        if len < sum.len() + 1 {
            return Err(invalid(format!("checksum buffer needs {} bytes, got {len}", sum.len() + 1)));
        }
        out[..sum.len()].copy_from_slice(sum.as_bytes());
        out[sum.len()] = 0;
        Ok(())
    })
}

/// Class probabilities of one image into `probs` (`num_classes` values).
///
/// # Safety
/// `pixels` must hold `pixel_count` floats and `probs` `prob_count` floats.
#[no_mangle]
pub unsafe extern "C" fn pcim_predict(
    model: *const PcimModel,
    pixels: *const f32,
    pixel_count: usize,
    probs: *mut f32,
    prob_count: usize,
) -> PcimStatus {
    guard(|| {
        let m = self::model(model)?;
        let img = image_for(m, slice(pixels, pixel_count, "pixels")?)?;
        let out = slice_mut(probs, prob_count, "probs")?;
        let k = m.network.num_classes();
        if prob_count != k {
            return Err(Fail(PcimStatus::Dimension, format!("{prob_count} probability slots for {k} classes")));
        }
        let (h, w) = img.dims();
        let p = predict(&m.network, &Tensor::new(vec![1, 1, h, w], img.pixels().to_vec())?)?;
        out.copy_from_slice(p.row(0));
        Ok(())
    })
}

/// Attribution map of `class` for one image, written to `map` (`height * width` values).
/// `image_id` seeds the random control and names the image in errors.
/// `options` may be null for the defaults.
///
/// # Safety
/// Buffers must hold the stated counts; strings must be nul-terminated.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn pcim_attribute(
    model: *const PcimModel,
    method: PcimMethod,
    image_id: *const c_char,
    pixels: *const f32,
    pixel_count: usize,
    class_index: usize,
    options: *const PcimAttributionOptions,
    map: *mut f32,
    map_count: usize,
) -> PcimStatus {
    guard(|| {
        let m = self::model(model)?;
        let id = string(image_id, "image_id")?;
        let img = image_for(m, slice(pixels, pixel_count, "pixels")?)?;
        let out = slice_mut(map, map_count, "map")?;
        if map_count != pixel_count {
            return Err(Fail(PcimStatus::Dimension, format!("map has {map_count} slots for {pixel_count} pixels")));
        }
        let o = match options.as_ref() {
            Some(o) => *o,
            None => pcim_attribution_options_default(),
        };
        if o.pcim_steps == 0 || o.ig_steps == 0 || o.rise_masks == 0 {
            return Err(invalid("step and mask counts must be positive"));
        }
        let mut cfg = AttributionConfig::default();
        cfg.pcim.steps = o.pcim_steps as usize;
        cfg.pcim.learning_rate = o.pcim_learning_rate;
        cfg.pcim.momentum = o.pcim_momentum;
        cfg.ig.steps = o.ig_steps as usize;
        cfg.rise.masks = o.rise_masks as usize;
        cfg.rise.seed = o.rise_seed;
        cfg.random_seed = o.random_seed;
        let result = attribute(&m.network, method.into(), id, &img, class_index, &cfg)?;
        out.copy_from_slice(result.values());
        Ok(())
    })
}

unsafe fn map_and_mask(
    map: *const f32,
    mask: *const u8,
    height: usize,
    width: usize,
) -> Result<(AttributionMap, GroundTruthMask), Fail> {
    let n = height.checked_mul(width).ok_or_else(|| invalid("dimensions overflow"))?;
    let values = slice(map, n, "map")?.to_vec();
    let cells = slice(mask, n, "mask")?.iter().map(|&c| c != 0).collect();
    Ok((
        AttributionMap::new(height, width, values, Method::Pcim)?,
        GroundTruthMask::new(height, width, cells)?,
    ))
}

/// Share of positive attribution inside the mask (non-zero bytes).
/// Returns `PCIM_STATUS_UNDEFINED_METRIC` when the map has no positive value.
///
/// # Safety
/// `map` and `mask` must hold `height * width` values.
#[no_mangle]
pub unsafe extern "C" fn pcim_mass_accuracy(
    map: *const f32,
    mask: *const u8,
    height: usize,
    width: usize,
    out: *mut f64,
) -> PcimStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (m, k) = map_and_mask(map, mask, height, width)?;
        *out = mass_accuracy(&m, &k)?;
        Ok(())
    })
}

/// Share of the `k` highest-attributed pixels inside the mask, `k` = mask size.
///
/// # Safety
/// `map` and `mask` must hold `height * width` values.
#[no_mangle]
pub unsafe extern "C" fn pcim_rank_accuracy(
    map: *const f32,
    mask: *const u8,
    height: usize,
    width: usize,
    out: *mut f64,
) -> PcimStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (m, k) = map_and_mask(map, mask, height, width)?;
        *out = rank_accuracy(&m, &k)?;
        Ok(())
    })
}

/// Mean SSIM of two maps as given (no normalization). Both sides need at least 7 pixels.
///
/// # Safety
/// `a` and `b` must hold `height * width` values.
#[no_mangle]
pub unsafe extern "C" fn pcim_ssim(
    a: *const f32,
    b: *const f32,
    height: usize,
    width: usize,
    out: *mut f64,
) -> PcimStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let n = height.checked_mul(width).ok_or_else(|| invalid("dimensions overflow"))?;
        let a = AttributionMap::new(height, width, slice(a, n, "a")?.to_vec(), Method::Pcim)?;
        let b = AttributionMap::new(height, width, slice(b, n, "b")?.to_vec(), Method::Pcim)?;
        *out = ssim(&a, &b)?;
        Ok(())
    })
}
