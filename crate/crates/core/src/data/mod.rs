//! Run configuration, samplers, the payload codec and image I/O.

pub mod codec;
pub mod config;
pub mod dataset;
pub mod image_io;
pub mod sample;
pub mod synth;

pub use codec::{pack_secret, pack_secret_shape, unpack_secret, BitStream, SecretTensor};
pub use config::{AdvLossMode, ExtractLossMode, RunConfig};
pub use dataset::{load_dataset, Dataset};
pub use image_io::{load_png, save_png, ImageBatch, ImageSource};
pub use sample::{
    derived_rng, gaussian_tensor, latent_from_rng, noise_from_rng, rng_from_seed, sample_latent, sample_noise,
    sample_secret, secret_from_rng, LatentVector, NoiseField,
};
pub use synth::write_synthetic_corpus;
