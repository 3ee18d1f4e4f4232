//! Procedural stand-in corpus: smooth gradients with soft-edged blobs and a
//! faint texture, so that a detector has natural-looking structure to learn.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

use super::image_io::write_rgb_png;
use super::sample::derived_rng;

const SYNTH_STREAM: u64 = 0x5717;

fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Interleaved RGB bytes of one procedural image.
pub fn synth_image(seed: u64, index: u64, size: usize) -> Vec<u8> {
    let mut rng = derived_rng(seed, SYNTH_STREAM, index);
    let top = random_color(&mut rng);
    let bottom = random_color(&mut rng);
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let blobs: Vec<([f32; 2], [f32; 2], f32, [f32; 3])> = (0..rng.random_range(2..5))
        .map(|_| {
            (
                [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)],
                [rng.random_range(0.08..0.35), rng.random_range(0.08..0.35)],
                rng.random_range(0.0..std::f32::consts::PI),
                random_color(&mut rng),
            )
        })
        .collect();
    let freq: f32 = rng.random_range(4.0..14.0);
    let amp: f32 = rng.random_range(0.0..0.06);

    let mut out = Vec::with_capacity(size * size * 3);
    let s = size as f32;
    for y in 0..size {
        for x in 0..size {
            let (u, v) = ((x as f32 + 0.5) / s, (y as f32 + 0.5) / s);
            let t = (((u - 0.5) * ca + (v - 0.5) * sa) + 0.71) / 1.42;
            let mut px = [0.0f32; 3];
            for c in 0..3 {
                px[c] = top[c] * (1.0 - t) + bottom[c] * t;
            }
            for (centre, radii, rot, color) in &blobs {
                let (dx, dy) = (u - centre[0], v - centre[1]);
                let (cr, sr) = (rot.cos(), rot.sin());
                let a = (dx * cr + dy * sr) / radii[0];
                let b = (-dx * sr + dy * cr) / radii[1];
                let r = (a * a + b * b).sqrt();
                let alpha = (1.0 - ((r - 1.0) * 6.0).clamp(-1.0, 1.0)) / 2.0;
                let shade = 1.0 - 0.25 * (a + b).clamp(-1.0, 1.0) * 0.5;
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - alpha) + color[c] * shade * alpha;
                }
            }
            let tex = amp * (freq * std::f32::consts::TAU * (u + 0.5 * v)).sin();
            for c in px {
                out.push(((c + tex).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

/// Write `count` PNGs named `synth_00000.png`, ... into `dir`.
pub fn write_synthetic_corpus(dir: impl AsRef<Path>, count: usize, size: usize, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    if size == 0 {
        return Err(Error::InvalidArgument("synthetic image size must be >= 1".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for i in 0..count {
        let rgb = synth_image(seed, i as u64, size);
        write_rgb_png(&dir.join(format!("synth_{i:05}.png")), &rgb, size, size)?;
    }
    Ok(())
}
