//! Bitstream ↔ secret tensor codec.
//!
//! Bits fill the `B×H×W` tensor in row-major order: channel, then row, then
//! column. Streams shorter than the capacity are zero padded.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::{Real, Tensor};

use super::config::RunConfig;

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitStream(Vec<u8>);

impl BitStream {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(Error::InvalidArgument(format!(
                "bit {pos} has value {}, expected 0 or 1",
                bits[pos]
            )));
        }
        Ok(Self(bits))
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Unpack bytes most-significant bit first.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        Self(
            bytes
                .iter()
                .flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1))
                .collect(),
        )
    }

    /// Pack most-significant bit first; the last byte is zero padded.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.0
            .chunks(8)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &b)| acc | (b << (7 - i)))
            })
            .collect()
    }

    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n > self.0.len() {
            return Err(Error::InvalidArgument(format!(
                "requested {n} bits from a stream of {}",
                self.0.len()
            )));
        }
        Ok(Self(self.0[..n].to_vec()))
    }
}

/// Binary payload `d ∈ {0,1}^(B×H×W)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SecretTensor {
    depth: usize,
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl SecretTensor {
    pub fn new(depth: usize, height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if depth * height * width != bits.len() || depth == 0 || height == 0 || width == 0 {
            return Err(Error::shape("secret_tensor", &[depth, height, width], &[bits.len()]));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidArgument("secret tensor entries must be 0 or 1".into()));
        }
        Ok(Self {
            depth,
            height,
            width,
            bits,
        })
    }

    pub fn zeros(depth: usize, height: usize, width: usize) -> Self {
        Self {
            depth,
            height,
            width,
            bits: vec![0; depth * height * width],
        }
    }

    pub fn for_config(cfg: &RunConfig) -> Self {
        Self::zeros(cfg.payload_depth, cfg.resolution, cfg.resolution)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.depth, self.height, self.width)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> u8 {
        self.bits[(channel * self.height + row) * self.width + col]
    }

    /// `[1, B, H, W]` tensor of 0.0 / 1.0.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            vec![1, self.depth, self.height, self.width],
            self.bits.iter().map(|&b| T::of(b as f64)).collect(),
        )
        .expect("secret tensor shape is consistent")
    }

    /// Stack into `[n, B, H, W]`.
    pub fn stack<T: Real>(items: &[SecretTensor]) -> Result<Tensor<T>> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero secrets".into()))?;
        let mut data = Vec::with_capacity(items.len() * first.len());
        for s in items {
            if s.shape() != first.shape() {
                let (a, b) = (first.shape(), s.shape());
                return Err(Error::shape("secret_stack", &[a.0, a.1, a.2], &[b.0, b.1, b.2]));
            }
            data.extend(s.bits.iter().map(|&b| T::of(b as f64)));
        }
        Tensor::new(vec![items.len(), first.depth, first.height, first.width], data)
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|&b| 1 - b).collect(),
            ..self.clone()
        }
    }
}

fn capacity_error(requested: usize, depth: usize, height: usize, width: usize) -> Error {
    Error::Capacity {
        requested,
        capacity: depth * height * width,
        depth,
        height,
        width,
    }
}

pub fn pack_secret(bits: &BitStream, cfg: &RunConfig) -> Result<SecretTensor> {
    let (b, h, w) = (cfg.payload_depth, cfg.resolution, cfg.resolution);
    pack_secret_shape(bits, b, h, w)
}

pub fn pack_secret_shape(bits: &BitStream, depth: usize, height: usize, width: usize) -> Result<SecretTensor> {
    let capacity = depth * height * width;
    if bits.len() > capacity {
        return Err(capacity_error(bits.len(), depth, height, width));
    }
    let mut data = bits.bits().to_vec();
    data.resize(capacity, 0);
    SecretTensor::new(depth, height, width, data)
}

pub fn unpack_secret(d: &SecretTensor, n_bits: usize) -> Result<BitStream> {
    if n_bits > d.len() {
        let (b, h, w) = d.shape();
        return Err(capacity_error(n_bits, b, h, w));
    }
    Ok(BitStream(d.bits[..n_bits].to_vec()))
}
