use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    Real,
    Cover,
    Stego,
}

/// `[n, 3, H, W]` pixels nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub pixels: Tensor<f32>,
    pub source: ImageSource,
}

impl ImageBatch {
    pub fn new(pixels: Tensor<f32>, source: ImageSource) -> Result<Self> {
        let s = pixels.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::shape("image_batch", &[0, 3, 0, 0], s));
        }
        Ok(Self { pixels, source })
    }

    pub fn len(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[3]
    }

    pub fn item(&self, i: usize) -> Result<ImageBatch> {
        Ok(Self {
            pixels: self.pixels.slice_batch(i, 1)?,
            source: self.source,
        })
    }

    /// Round-trip through 8-bit quantisation.
    pub fn quantized(&self) -> ImageBatch {
        Self {
            pixels: self.pixels.map(|x| dequantize(quantize(x))),
            source: self.source,
        }
    }
}

/// `q = round_half_up((clamp(x, -1, 1) + 1) / 2 · 255)`.
pub fn quantize(x: f32) -> u8 {
    let x = if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
    let v = ((f64::from(x) + 1.0) / 2.0 * 255.0 + 0.5).floor();
    v.clamp(0.0, 255.0) as u8
}

pub fn dequantize(q: u8) -> f32 {
    (f64::from(q) / 255.0 * 2.0 - 1.0) as f32
}

/// Interleaved RGB bytes of image `index`.
pub fn to_rgb8(batch: &ImageBatch, index: usize) -> Result<Vec<u8>> {
    if index >= batch.len() {
        return Err(Error::InvalidArgument(format!(
            "image index {index} out of range for batch of {}",
            batch.len()
        )));
    }
    let (h, w) = (batch.height(), batch.width());
    let plane = h * w;
    let base = index * 3 * plane;
    let px = batch.pixels.data();
    let mut out = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for c in 0..3 {
            let x = px[base + c * plane + p];
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    what: "image pixel".into(),
                    location: Some(format!("image {index} channel {c} pixel {p}")),
                });
            }
            out.push(quantize(x));
        }
    }
    Ok(out)
}

pub fn from_rgb8(rgb: &[u8], height: usize, width: usize, source: ImageSource) -> Result<ImageBatch> {
    if rgb.len() != 3 * height * width {
        return Err(Error::shape("from_rgb8", &[height, width, 3], &[rgb.len()]));
    }
    let plane = height * width;
    let mut data = vec![0.0f32; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            data[c * plane + p] = dequantize(rgb[3 * p + c]);
        }
    }
    ImageBatch::new(Tensor::new(vec![1, 3, height, width], data)?, source)
}

pub fn write_rgb_png(path: &Path, rgb: &[u8], height: usize, width: usize) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| png_error(path, e))?;
        writer.write_image_data(rgb).map_err(|e| png_error(path, e))?;
        writer.finish().map_err(|e| png_error(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn png_error(path: &Path, e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

/// Write image 0 of a single-image batch as 8-bit RGB.
pub fn save_png(img: &ImageBatch, path: impl AsRef<Path>) -> Result<()> {
    if img.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "save_png takes a single image, got a batch of {}",
            img.len()
        )));
    }
    let rgb = to_rgb8(img, 0)?;
    write_rgb_png(path.as_ref(), &rgb, img.height(), img.width())
}

/// Decode an 8-bit PNG into RGB bytes; grey and alpha channels are expanded or dropped.
pub fn read_rgb_png(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let bad = |reason: String| Error::Image {
        path: path.to_path_buf(),
        reason,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(|e| bad(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| bad("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(bad(format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let buf = &buf[..info.buffer_size()];
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => buf.to_vec(),
        png::ColorType::Rgba => buf.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        other => return Err(bad(format!("unsupported color type {other:?}"))),
    };
    Ok((rgb, h, w))
}

pub fn load_png(path: impl AsRef<Path>) -> Result<ImageBatch> {
    let path = path.as_ref();
    let (rgb, h, w) = read_rgb_png(path)?;
    from_rgb8(&rgb, h, w, ImageSource::Real)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn quantization_endpoints() {
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.0), 128);
        assert_eq!(quantize(7.0), 255);
        assert_eq!(quantize(-3.0), 0);
    }

    #[test]
    fn quantization_error_bound() {
        for i in 0..=2000 {
            let x = -1.0 + i as f32 / 1000.0;
            assert!((dequantize(quantize(x)) - x).abs() <= 1.0 / 255.0 + 1e-6, "{x}");
        }
        for q in 0..=255u8 {
            assert_eq!(quantize(dequantize(q)), q);
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let t = Tensor::from_fn(&[1, 3, 8, 8], |_| rng.random_range(-1.2f32..1.2));
        let img = ImageBatch::new(t, ImageSource::Stego).unwrap();
        let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
        save_png(&img, &a).unwrap();
        let loaded = load_png(&a).unwrap();
        save_png(&loaded, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(loaded.pixels, img.quantized().pixels);
    }

    #[test]
    fn malformed_and_unwritable_paths_error() {
        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not a png").unwrap();
        assert!(matches!(load_png(&junk), Err(Error::Image { .. })));
        let img = ImageBatch::new(Tensor::zeros(&[1, 3, 2, 2]), ImageSource::Cover).unwrap();
        assert!(matches!(
            save_png(&img, dir.path().join("missing/x.png")),
            Err(Error::Io { .. })
        ));
    }
}
