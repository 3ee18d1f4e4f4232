//! C ABI over a trained checkpoint: generate cover or stego images as
//! interleaved 8-bit RGB and recover bits from them.
//!
//! Every fallible call returns a [`GsnStatus`]; the message for the most
//! recent failure on the calling thread is available from
//! [`gsn_last_error_message`]. Bit buffers are packed MSB first.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use gensteg::data::image_io::{from_rgb8, to_rgb8};
use gensteg::data::{BitStream, ImageSource, RunConfig};
use gensteg::extractor::Extractor;
use gensteg::generator::{Generator, PayloadMode};
use gensteg::harness::generate_image;
use gensteg::training::Checkpoint;
use gensteg::{Error, ErrorCategory};

/// Result codes. Values 2 to 11 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GsnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Capacity = 4,
    Config = 5,
    Io = 6,
    Image = 7,
    Dataset = 8,
    Checkpoint = 9,
    NonFinite = 10,
    GradCheck = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

impl From<ErrorCategory> for GsnStatus {
    fn from(c: ErrorCategory) -> Self {
        match c {
            ErrorCategory::InvalidArgument => GsnStatus::InvalidArgument,
            ErrorCategory::Shape => GsnStatus::Shape,
            ErrorCategory::Capacity => GsnStatus::Capacity,
            ErrorCategory::Config => GsnStatus::Config,
            ErrorCategory::Io => GsnStatus::Io,
            ErrorCategory::Image => GsnStatus::Image,
            ErrorCategory::Dataset => GsnStatus::Dataset,
            ErrorCategory::Checkpoint => GsnStatus::Checkpoint,
            ErrorCategory::NonFinite => GsnStatus::NonFinite,
            ErrorCategory::GradCheck => GsnStatus::GradCheck,
        }
    }
}

/// Generator and extractor loaded from a checkpoint. Opaque to C.
pub struct GsnModel {
    cfg: RunConfig,
    generator: Generator<f32>,
    extractor: Extractor<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: GsnStatus, msg: &str) -> GsnStatus {
    set_error(msg);
    status
}

/// Run `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (GsnStatus, String)>) -> GsnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GsnStatus::Ok
        }
        Ok(Err((s, m))) => fail(s, &m),
        Err(_) => fail(GsnStatus::Panic, "internal panic"),
    }
}

fn lib_err(e: Error) -> (GsnStatus, String) {
    (e.category().into(), e.to_string())
}

fn null(what: &str) -> (GsnStatus, String) {
    (GsnStatus::NullPointer, format!("{what} is null"))
}

/// Message for the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn gsn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a checkpoint. On success `*out` owns a model that must be released
/// with [`gsn_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gsn_model_load(path: *const c_char, out: *mut *mut GsnModel) -> GsnStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (GsnStatus::InvalidArgument, "path is not valid UTF-8".to_string()))?;
        let ckpt = Checkpoint::read(path).map_err(lib_err)?;
        let (generator, extractor) = ckpt.inference_models().map_err(lib_err)?;
        let model = GsnModel {
            cfg: ckpt.config,
            generator,
            extractor,
        };
        *out = Box::into_raw(Box::new(model));
        Ok(())
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`gsn_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gsn_model_free(model: *mut GsnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Image side length in pixels, 0 for a null model.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn gsn_model_resolution(model: *const GsnModel) -> usize {
    model.as_ref().map_or(0, |m| m.cfg.resolution)
}

/// Bits carried per image, 0 for a null model.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn gsn_model_capacity(model: *const GsnModel) -> usize {
    model.as_ref().map_or(0, |m| m.cfg.capacity())
}

/// Bytes of RGB output per image (side * side * 3), 0 for a null model.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn gsn_model_image_bytes(model: *const GsnModel) -> usize {
    model.as_ref().map_or(0, |m| m.cfg.resolution * m.cfg.resolution * 3)
}

unsafe fn generate(
    model: *const GsnModel,
    mode: PayloadMode,
    bits: Option<BitStream>,
    seed: u64,
    index: u64,
    rgb_out: *mut u8,
    rgb_len: usize,
) -> Result<(), (GsnStatus, String)> {
    let m = model.as_ref().ok_or_else(|| null("model"))?;
    if rgb_out.is_null() {
        return Err(null("rgb_out"));
    }
    let need = m.cfg.resolution * m.cfg.resolution * 3;
    if rgb_len < need {
        return Err((GsnStatus::BufferTooSmall, format!("rgb_out holds {rgb_len} bytes, {need} needed")));
    }
    let img = generate_image(&m.generator, &m.cfg, mode, bits.as_ref(), seed, index).map_err(lib_err)?;
    let rgb = to_rgb8(&img, 0).map_err(lib_err)?;
    std::slice::from_raw_parts_mut(rgb_out, need).copy_from_slice(&rgb);
    Ok(())
}

/// Generate a cover image into `rgb_out`. The same `(seed, index)` always
/// gives the same image.
///
/// # Safety
/// `model` must be a live model and `rgb_out` writable for `rgb_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn gsn_generate_cover(
    model: *const GsnModel,
    seed: u64,
    index: u64,
    rgb_out: *mut u8,
    rgb_len: usize,
) -> GsnStatus {
    guard(|| generate(model, PayloadMode::Cover, None, seed, index, rgb_out, rgb_len))
}

/// Generate a stego image carrying the first `n_bits` bits of `payload`,
/// zero-padded to capacity.
///
/// # Safety
/// `model` must be a live model, `payload` readable for `ceil(n_bits / 8)`
/// bytes and `rgb_out` writable for `rgb_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn gsn_generate_stego(
    model: *const GsnModel,
    payload: *const u8,
    n_bits: usize,
    seed: u64,
    index: u64,
    rgb_out: *mut u8,
    rgb_len: usize,
) -> GsnStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if payload.is_null() && n_bits > 0 {
            return Err(null("payload"));
        }
        let cap = m.cfg.capacity();
        if n_bits > cap {
            return Err(lib_err(Error::Capacity {
                requested: n_bits,
                capacity: cap,
                depth: m.cfg.payload_depth,
                height: m.cfg.resolution,
                width: m.cfg.resolution,
            }));
        }
        let bytes = if n_bits == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(payload, n_bits.div_ceil(8))
        };
        let bits = BitStream::from_bytes(bytes).truncated(n_bits).map_err(lib_err)?;
        generate(model, PayloadMode::Stego, Some(bits), seed, index, rgb_out, rgb_len)
    })
}

/// Recover `n_bits` bits from an RGB image into `bits_out`, packed MSB first.
///
/// # Safety
/// `model` must be a live model, `rgb` readable for `rgb_len` bytes and
/// `bits_out` writable for `bits_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn gsn_extract(
    model: *const GsnModel,
    rgb: *const u8,
    rgb_len: usize,
    n_bits: usize,
    bits_out: *mut u8,
    bits_len: usize,
) -> GsnStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        if bits_out.is_null() {
            return Err(null("bits_out"));
        }
        let h = m.cfg.resolution;
        if rgb_len != h * h * 3 {
            return Err((
                GsnStatus::Image,
                format!("image has {rgb_len} bytes, a {h}x{h} RGB image has {}", h * h * 3),
            ));
        }
        if n_bits > m.cfg.capacity() {
            return Err(lib_err(Error::Capacity {
                requested: n_bits,
                capacity: m.cfg.capacity(),
                depth: m.cfg.payload_depth,
                height: h,
                width: h,
            }));
        }
        let need = n_bits.div_ceil(8);
        if bits_len < need {
            return Err((GsnStatus::BufferTooSmall, format!("bits_out holds {bits_len} bytes, {need} needed")));
        }
        let img = from_rgb8(std::slice::from_raw_parts(rgb, rgb_len), h, h, ImageSource::Stego).map_err(lib_err)?;
        let bits = m.extractor.extract_bits(&img, n_bits).map_err(lib_err)?.remove(0);
        std::slice::from_raw_parts_mut(bits_out, need).copy_from_slice(&bits.to_bytes());
        Ok(())
    })
}
