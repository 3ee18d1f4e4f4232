use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::substrate::Tensor;

use super::config::RunConfig;
use super::image_io::{ImageBatch, ImageSource};
use super::sample::derived_rng;

const SHUFFLE_STREAM: u64 = 0xda7a;

/// Real images held in memory at training resolution.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Tensor<f32>,
    skipped: usize,
    seed: u64,
}

impl Dataset {
    pub fn from_tensor(images: Tensor<f32>, seed: u64) -> Result<Self> {
        if images.shape().len() != 4 || images.shape()[1] != 3 {
            return Err(Error::shape("dataset", &[0, 3, 0, 0], images.shape()));
        }
        Ok(Self {
            images,
            skipped: 0,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Files that could not be decoded.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn resolution(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut derived_rng(self.seed, SHUFFLE_STREAM, epoch));
        order
    }

    fn gather(&self, indices: &[usize]) -> ImageBatch {
        let per = self.images.len() / self.len();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        ImageBatch {
            pixels: Tensor::new(shape, data).expect("gathered batch shape"),
            source: ImageSource::Real,
        }
    }

    /// One pass in seeded order; the last batch may be short.
    pub fn epoch_batches(&self, epoch: u64, batch_size: usize) -> impl Iterator<Item = ImageBatch> + '_ {
        let order = self.epoch_order(epoch);
        let chunks: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |idx| self.gather(&idx))
    }

    /// Full batch for training step `step`, read from the concatenation of
    /// seeded epochs, so any step is reachable without replaying earlier ones.
    pub fn batch_for_step(&self, step: u64, batch_size: usize) -> ImageBatch {
        let n = self.len() as u64;
        let start = step * batch_size as u64;
        let mut cached: Option<(u64, Vec<usize>)> = None;
        let indices: Vec<usize> = (start..start + batch_size as u64)
            .map(|pos| {
                let epoch = pos / n;
                if cached.as_ref().map(|c| c.0) != Some(epoch) {
                    cached = Some((epoch, self.epoch_order(epoch)));
                }
                cached.as_ref().unwrap().1[(pos % n) as usize]
            })
            .collect();
        self.gather(&indices)
    }
}

fn decode(path: &Path, size: u32) -> std::result::Result<Vec<f32>, String> {
    let img = image::ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .decode()
        .map_err(|e| e.to_string())?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let side = w.min(h);
    let cropped = image::imageops::crop_imm(&img, (w - side) / 2, (h - side) / 2, side, side).to_image();
    let resized = if side == size {
        cropped
    } else {
        image::imageops::resize(&cropped, size, size, FilterType::Triangle)
    };
    let plane = (size * size) as usize;
    let mut out = vec![0.0f32; 3 * plane];
    for (p, px) in resized.pixels().enumerate() {
        for c in 0..3 {
            out[c * plane + p] = (f64::from(px[c]) / 255.0 * 2.0 - 1.0) as f32;
        }
    }
    Ok(out)
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let hidden = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with('.'));
        if path.is_file() && !hidden {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Load every decodable image in `dir`: centre crop, resize to the configured
/// resolution and map to `[-1, 1]`.
pub fn load_dataset(dir: impl AsRef<Path>, cfg: &RunConfig) -> Result<Dataset> {
    let dir = dir.as_ref();
    let files = list_files(dir)?;
    if files.is_empty() {
        return Err(Error::Dataset(format!("no files in {}", dir.display())));
    }
    let size = cfg.resolution;
    let mut data = Vec::new();
    let mut loaded = 0;
    let mut skipped = 0;
    for path in &files {
        match decode(path, size as u32) {
            Ok(px) => {
                data.extend(px);
                loaded += 1;
            }
            Err(reason) => {
                log::warn!("skipping {}: {reason}", path.display());
                skipped += 1;
            }
        }
    }
    if loaded == 0 {
        return Err(Error::Dataset(format!(
            "none of the {} files in {} could be decoded",
            files.len(),
            dir.display()
        )));
    }
    if skipped > 0 {
        log::warn!("{skipped} unreadable files skipped in {}", dir.display());
    }
    Ok(Dataset {
        images: Tensor::new(vec![loaded, 3, size, size], data)?,
        skipped,
        seed: cfg.seed,
    })
}
