//! Full-resolution convolutional decoder from stego images back to bits.

use rand::Rng;

use crate::data::{unpack_secret, BitStream, ImageBatch, RunConfig, SecretTensor};
use crate::error::{Error, Result};
use crate::nn::{act, Conv};
use crate::substrate::{Bound, Graph, PadMode, ParamSet, Padding, Real, Tensor, Var};

const SAME: Padding = Padding::Same(PadMode::Reflect);

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorArch {
    pub resolution: usize,
    pub payload_depth: usize,
    pub slope: f64,
    /// Pairs of 3×3 convolutions, one pair per block.
    pub blocks: Vec<[Conv; 2]>,
    pub head: Conv,
    pub out: Conv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extractor<T> {
    pub arch: ExtractorArch,
    pub params: ParamSet<T>,
}

impl<T: Real> Extractor<T> {
    pub fn new(cfg: &RunConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.extractor_width;
        let mut params = ParamSet::new();
        let mut blocks = Vec::new();
        let mut ch = 3;
        for i in 0..cfg.extractor_blocks {
            let c0 = Conv::new(&mut params, &format!("block{i}.conv0"), ch, w, 3, true, rng);
            let c1 = Conv::new(&mut params, &format!("block{i}.conv1"), w, w, 3, true, rng);
            blocks.push([c0, c1]);
            ch = w;
        }
        let head = Conv::new(&mut params, "head", ch, w, 1, true, rng);
        let out = Conv::new(&mut params, "out", w, cfg.payload_depth, 1, true, rng);
        Ok(Self {
            arch: ExtractorArch {
                resolution: cfg.resolution,
                payload_depth: cfg.payload_depth,
                slope: cfg.leaky_slope,
                blocks,
                head,
                out,
            },
            params,
        })
    }

    pub fn cast<U: Real>(&self) -> Extractor<U> {
        Extractor {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    /// `[n,3,H,W]` image to `[n,B,H,W]` logits.
    pub fn extract_logits(&self, g: &mut Graph<T>, b: &Bound, img: Var) -> Result<Var> {
        let s = g.shape(img);
        let h = self.arch.resolution;
        if s.len() != 4 || s[1] != 3 || s[2] != h || s[3] != h {
            return Err(Error::shape("extract_logits", s, &[s.first().copied().unwrap_or(1), 3, h, h]));
        }
        let mut x = img;
        for [c0, c1] in &self.arch.blocks {
            let y = c0.forward(g, b, x, SAME)?;
            let y = act(g, y, self.arch.slope);
            let y = c1.forward(g, b, y, SAME)?;
            x = act(g, y, self.arch.slope);
        }
        let y = self.arch.head.forward(g, b, x, SAME)?;
        let y = act(g, y, self.arch.slope);
        self.arch.out.forward(g, b, y, SAME)
    }
}

impl Extractor<f32> {
    pub fn logits(&self, img: &ImageBatch) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let x = g.leaf(img.pixels.clone());
        let y = self.extract_logits(&mut g, &b, x)?;
        Ok(g.value(y).clone())
    }

    pub fn extract(&self, img: &ImageBatch) -> Result<Vec<SecretTensor>> {
        binarize(&self.logits(img)?)
    }

    /// Receiver side: one bitstream per image.
    pub fn extract_bits(&self, img: &ImageBatch, n_bits: usize) -> Result<Vec<BitStream>> {
        bits_from_logits(&self.logits(img)?, n_bits)
    }
}

/// `d' = 1` iff `F ≥ 0`, i.e. `round(sigmoid(F))` with ties rounded up.
pub fn binarize<T: Real>(logits: &Tensor<T>) -> Result<Vec<SecretTensor>> {
    let (n, c, h, w) = logits.dims4()?;
    let per = c * h * w;
    (0..n)
        .map(|i| {
            let slice = &logits.data()[i * per..(i + 1) * per];
            if slice.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "extractor logits".into(),
                    location: Some(format!("image {i}")),
                });
            }
            let bits = slice.iter().map(|&v| (v >= T::zero()) as u8).collect();
            SecretTensor::new(c, h, w, bits)
        })
        .collect()
}

pub fn bits_from_logits<T: Real>(logits: &Tensor<T>, n_bits: usize) -> Result<Vec<BitStream>> {
    binarize(logits)?
        .iter()
        .map(|d| unpack_secret(d, n_bits))
        .collect()
}

/// Fraction of positions where the two tensors agree.
pub fn accuracy(d: &SecretTensor, d_hat: &SecretTensor) -> Result<f64> {
    if d.shape() != d_hat.shape() {
        let (a, b) = (d.shape(), d_hat.shape());
        return Err(Error::shape("accuracy", &[a.0, a.1, a.2], &[b.0, b.1, b.2]));
    }
    Ok(bit_accuracy(d.bits(), d_hat.bits()))
}

pub fn bit_accuracy(a: &[u8], b: &[u8]) -> f64 {
    if a.is_empty() {
        return 1.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

/// Mean accuracy over a batch of pairs.
pub fn batch_accuracy(d: &[SecretTensor], d_hat: &[SecretTensor]) -> Result<f64> {
    if d.len() != d_hat.len() || d.is_empty() {
        return Err(Error::shape("batch_accuracy", &[d.len()], &[d_hat.len()]));
    }
    let mut total = 0.0;
    for (a, b) in d.iter().zip(d_hat) {
        total += accuracy(a, b)?;
    }
    Ok(total / d.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{pack_secret_shape, rng_from_seed, secret_from_rng};
    use crate::nn::fill_params;
    use crate::substrate::check_gradients;

    fn cfg(width: usize) -> RunConfig {
        RunConfig {
            resolution: 16,
            payload_depth: 2,
            extractor_width: width,
            ..RunConfig::default()
        }
    }

    #[test]
    fn binarize_thresholds_at_zero() {
        let t = Tensor::new(vec![1, 1, 1, 3], vec![2.0f32, -3.0, 0.0]).unwrap();
        assert_eq!(binarize(&t).unwrap()[0].bits(), &[1, 0, 1]);
        let nan = Tensor::new(vec![1, 1, 1, 1], vec![f32::NAN]).unwrap();
        assert!(binarize(&nan).is_err());
    }

    #[test]
    fn accuracy_counts() {
        let d = SecretTensor::new(1, 2, 2, vec![1, 0, 1, 1]).unwrap();
        let e = SecretTensor::new(1, 2, 2, vec![1, 1, 1, 0]).unwrap();
        assert_eq!(accuracy(&d, &e).unwrap(), 0.5);
        assert_eq!(accuracy(&d, &d).unwrap(), 1.0);
        assert_eq!(accuracy(&d, &d.complement()).unwrap(), 0.0);
        assert!(accuracy(&d, &SecretTensor::zeros(1, 1, 4)).is_err());
    }

    #[test]
    fn independent_secrets_agree_half_the_time() {
        let mut rng = rng_from_seed(1);
        let a = secret_from_rng(&mut rng, 1, 1, 100_000);
        let b = secret_from_rng(&mut rng, 1, 1, 100_000);
        let acc = accuracy(&a, &b).unwrap();
        assert!((acc - 0.5).abs() <= 0.01, "{acc}");
        assert_eq!(acc, accuracy(&b, &a).unwrap());
    }

    #[test]
    fn saturated_logits_reencode() {
        let mut rng = rng_from_seed(2);
        let d = secret_from_rng(&mut rng, 2, 4, 4);
        let logits = d.to_tensor::<f64>().map(|v| if v > 0.5 { f64::MAX } else { f64::MIN });
        assert_eq!(binarize(&logits).unwrap()[0], d);
    }

    #[test]
    fn oracle_round_trip() {
        let bits = BitStream::new(vec![1, 0, 0, 1, 1]).unwrap();
        let d = pack_secret_shape(&bits, 2, 4, 4).unwrap();
        let logits = d.to_tensor::<f32>().map(|v| 8.0 * v - 4.0);
        assert_eq!(bits_from_logits(&logits, 5).unwrap()[0], bits);
        assert!(bits_from_logits(&logits, 0).unwrap()[0].is_empty());
    }

    #[test]
    fn shape_and_zero_weights() {
        let mut e = Extractor::<f32>::new(&cfg(4), &mut rng_from_seed(3)).unwrap();
        let img = ImageBatch::new(Tensor::full(&[2, 3, 16, 16], 0.3), crate::data::ImageSource::Stego).unwrap();
        assert_eq!(e.logits(&img).unwrap().shape(), &[2, 2, 16, 16]);
        fill_params(&mut e.params, 0.0);
        let bias = e.arch.out.bias.unwrap();
        e.params.get_mut(bias).value = Tensor::new(vec![2], vec![0.25, -1.5]).unwrap();
        let f = e.logits(&img).unwrap();
        assert!(f.data()[..256].iter().all(|&v| v == 0.25));
        assert!(f.data()[256..512].iter().all(|&v| v == -1.5));
        let wrong = ImageBatch::new(Tensor::zeros(&[1, 3, 8, 8]), crate::data::ImageSource::Stego).unwrap();
        assert!(e.logits(&wrong).is_err());
    }

    #[test]
    fn gradient_wrt_image() {
        // weights do not depend on the resolution, so shrink it for the check
        let mut e8 = Extractor::<f64>::new(&cfg(2), &mut rng_from_seed(4)).unwrap();
        e8.arch.resolution = 4;
        let mut rng = rng_from_seed(5);
        let x = crate::data::gaussian_tensor(&mut rng, &[1, 3, 4, 4], 1.0).cast::<f64>();
        let r = check_gradients(
            "extract_logits",
            |g, v| {
                let b = e8.params.bind(g);
                e8.extract_logits(g, &b, v[0])
            },
            &[x],
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}
