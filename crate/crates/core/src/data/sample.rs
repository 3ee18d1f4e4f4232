use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::substrate::Tensor;

use super::codec::SecretTensor;
use super::config::RunConfig;

/// Standard-normal latent `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(pub Vec<f32>);

impl LatentVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Stack into `[n, latent_dim]`.
    pub fn stack(items: &[LatentVector]) -> Result<Tensor<f32>> {
        let dim = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero latents".into()))?
            .len();
        let mut data = Vec::with_capacity(items.len() * dim);
        for z in items {
            if z.len() != dim {
                return Err(Error::shape("latent_stack", &[dim], &[z.len()]));
            }
            data.extend_from_slice(&z.0);
        }
        Tensor::new(vec![items.len(), dim], data)
    }
}

/// Single-channel Gaussian field `1×H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl NoiseField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![1, 1, self.height, self.width], self.data.clone()).expect("noise field shape is consistent")
    }

    pub fn stack(items: &[NoiseField]) -> Result<Tensor<f32>> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero noise fields".into()))?;
        let mut data = Vec::with_capacity(items.len() * first.data.len());
        for n in items {
            if (n.height, n.width) != (first.height, first.width) {
                return Err(Error::shape(
                    "noise_stack",
                    &[first.height, first.width],
                    &[n.height, n.width],
                ));
            }
            data.extend_from_slice(&n.data);
        }
        Tensor::new(vec![items.len(), 1, first.height, first.width], data)
    }
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for `(seed, tag, index)`; used so that step `k` of a run
/// can be replayed without replaying steps `0..k`.
pub fn derived_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.set_word_pos(u128::from(index) << 64);
    rng
}

pub fn secret_from_rng(rng: &mut impl Rng, depth: usize, height: usize, width: usize) -> SecretTensor {
    let bits = (0..depth * height * width).map(|_| rng.random::<bool>() as u8).collect();
    SecretTensor::new(depth, height, width, bits).expect("sampled secret is well formed")
}

pub fn latent_from_rng(rng: &mut impl Rng, dim: usize) -> LatentVector {
    LatentVector((0..dim).map(|_| StandardNormal.sample(rng)).collect())
}

pub fn noise_from_rng(rng: &mut impl Rng, height: usize, width: usize, sigma: f64) -> Result<NoiseField> {
    let normal = Normal::new(0.0, sigma)
        .ok()
        .filter(|_| sigma > 0.0)
        .ok_or_else(|| Error::InvalidArgument(format!("noise sigma must be positive, got {sigma}")))?;
    Ok(NoiseField {
        height,
        width,
        data: (0..height * width).map(|_| normal.sample(rng) as f32).collect(),
    })
}

/// Tensor of i.i.d. `N(0, std²)` entries.
pub fn gaussian_tensor(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(rng);
        (v * std) as f32
    })
}

pub fn sample_secret(seed: u64, cfg: &RunConfig) -> SecretTensor {
    secret_from_rng(&mut rng_from_seed(seed), cfg.payload_depth, cfg.resolution, cfg.resolution)
}

pub fn sample_latent(seed: u64, cfg: &RunConfig) -> LatentVector {
    latent_from_rng(&mut rng_from_seed(seed), cfg.latent_dim)
}

pub fn sample_noise(seed: u64, cfg: &RunConfig, sigma: f64) -> Result<NoiseField> {
    noise_from_rng(&mut rng_from_seed(seed), cfg.resolution, cfg.resolution, sigma)
}
