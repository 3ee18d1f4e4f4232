//! Held-out measurements: extraction accuracy on fresh secrets and
//! detectability by a steganalyzer trained from scratch on generated pairs.

use serde::{Deserialize, Serialize};

use crate::adversaries::{mae_pairs, pe, DetectionReport, Steganalyzer};
use crate::data::{derived_rng, gaussian_tensor, secret_from_rng, ImageBatch, ImageSource, RunConfig, SecretTensor};
use crate::error::{Error, Result};
use crate::extractor::{batch_accuracy, Extractor};
use crate::generator::{Generator, MergePayload, PayloadMode};
use crate::substrate::{Graph, Tensor};

use super::losses::steganalyzer_loss;
use super::optim::{Adam, AdamConfig};

pub const MIN_EVAL_PAIRS: usize = 64;
const PAIR_STREAM: u64 = 0x9a12;
const DETECTOR_STREAM: u64 = 0xde7e;
/// Images generated per forward pass.
const CHUNK: usize = 16;
/// Cover/stego pairs per detector minibatch.
const DETECTOR_PAIRS: usize = 8;

/// Cover and stego images sharing `z` and block noise pairwise, quantised to
/// 8 bits as they would be after saving.
#[derive(Debug, Clone)]
pub struct PairSet {
    pub covers: ImageBatch,
    pub stegos: ImageBatch,
    pub secrets: Vec<SecretTensor>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.secrets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.secrets.is_empty()
    }

    pub fn slice(&self, start: usize, count: usize) -> Result<PairSet> {
        Ok(PairSet {
            covers: ImageBatch::new(self.covers.pixels.slice_batch(start, count)?, ImageSource::Cover)?,
            stegos: ImageBatch::new(self.stegos.pixels.slice_batch(start, count)?, ImageSource::Stego)?,
            secrets: self.secrets[start..start + count].to_vec(),
        })
    }
}

/// With `zero_payload` both branches receive an all-zero merge tensor.
pub fn generate_pairs(g: &Generator<f32>, cfg: &RunConfig, n: usize, seed: u64, zero_payload: bool) -> Result<PairSet> {
    let h = cfg.resolution;
    let (mut covers, mut stegos, mut secrets) = (Vec::new(), Vec::new(), Vec::new());
    for (chunk, start) in (0..n).step_by(CHUNK).enumerate() {
        let m = CHUNK.min(n - start);
        let mut rng = derived_rng(seed, PAIR_STREAM, chunk as u64);
        let z = gaussian_tensor(&mut rng, &[m, cfg.latent_dim], 1.0);
        let noise: Vec<Tensor<f32>> = g.noise_shapes(m).iter().map(|s| gaussian_tensor(&mut rng, s, 1.0)).collect();
        let d: Vec<SecretTensor> = (0..m).map(|_| secret_from_rng(&mut rng, cfg.payload_depth, h, h)).collect();
        let n_field = gaussian_tensor(&mut rng, &[m, 1, h, h], cfg.sigma_test);
        let (cover_t, stego_t) = if zero_payload {
            (Tensor::zeros(&[m, 1, h, h]), Tensor::zeros(&[m, cfg.payload_depth, h, h]))
        } else {
            (n_field, SecretTensor::stack(&d)?)
        };
        let cover = MergePayload {
            mode: PayloadMode::Cover,
            tensor: cover_t,
        };
        let stego = MergePayload {
            mode: PayloadMode::Stego,
            tensor: stego_t,
        };
        covers.push(g.generate(&z, &cover, &noise)?.quantized().pixels);
        stegos.push(g.generate(&z, &stego, &noise)?.quantized().pixels);
        secrets.extend(d);
    }
    let cat = |v: &Vec<Tensor<f32>>| Tensor::concat_batch(&v.iter().collect::<Vec<_>>());
    Ok(PairSet {
        covers: ImageBatch::new(cat(&covers)?, ImageSource::Cover)?,
        stegos: ImageBatch::new(cat(&stegos)?, ImageSource::Stego)?,
        secrets,
    })
}

/// Mean bit accuracy over `pairs` fresh secrets, read back from quantised
/// stego images.
pub fn extraction_accuracy(e: &Extractor<f32>, pairs: &PairSet) -> Result<f64> {
    let mut recovered = Vec::with_capacity(pairs.len());
    for start in (0..pairs.len()).step_by(CHUNK) {
        let m = CHUNK.min(pairs.len() - start);
        let batch = ImageBatch::new(pairs.stegos.pixels.slice_batch(start, m)?, ImageSource::Stego)?;
        recovered.extend(e.extract(&batch)?);
    }
    batch_accuracy(&pairs.secrets, &recovered)
}

/// Generate `n` fresh pairs and measure extraction accuracy on them.
pub fn fresh_accuracy(g: &Generator<f32>, e: &Extractor<f32>, cfg: &RunConfig, n: usize, seed: u64) -> Result<f64> {
    let pairs = generate_pairs(g, cfg, n, seed, false)?;
    extraction_accuracy(e, &pairs)
}

/// Train a fresh steganalyzer to separate the given covers from stegos.
pub fn train_detector(cfg: &RunConfig, train: &PairSet, seed: u64) -> Result<Steganalyzer<f32>> {
    let mut s = Steganalyzer::<f32>::new(cfg, &mut derived_rng(seed, DETECTOR_STREAM, 0))?;
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.steganalyzer_learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        &s.params,
    );
    let n = train.len();
    for epoch in 0..cfg.steganalyzer_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut derived_rng(seed, DETECTOR_STREAM, 1 + epoch as u64));
        for idx in order.chunks(DETECTOR_PAIRS) {
            let pick = |b: &ImageBatch| -> Result<Tensor<f32>> {
                let items: Vec<Tensor<f32>> = idx.iter().map(|&i| b.pixels.slice_batch(i, 1)).collect::<Result<_>>()?;
                Tensor::concat_batch(&items.iter().collect::<Vec<_>>())
            };
            let (c, st) = (pick(&train.covers)?, pick(&train.stegos)?);
            let mut g = Graph::new();
            let b = s.params.bind(&mut g);
            let cv = g.leaf(c);
            let sv = g.leaf(st);
            let pc = s.steganalyze(&mut g, &b, cv)?;
            let ps = s.steganalyze(&mut g, &b, sv)?;
            let loss = steganalyzer_loss(&mut g, pc, ps)?;
            if !g.scalar_value(loss).is_finite() {
                return Err(Error::NonFinite {
                    what: "detector loss".into(),
                    location: Some(format!("epoch {epoch}")),
                });
            }
            s.params.accumulate_grads(&mut g, &b, loss)?;
            opt.step(&mut s.params)?;
        }
    }
    Ok(s)
}

fn scores(s: &Steganalyzer<f32>, images: &ImageBatch) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(images.len());
    for start in (0..images.len()).step_by(CHUNK) {
        let m = CHUNK.min(images.len() - start);
        out.extend(s.stego_scores(&ImageBatch::new(images.pixels.slice_batch(start, m)?, images.source)?)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_train: usize,
    pub n_test: usize,
    pub zero_payload: bool,
    pub detection: DetectionReport,
    /// Mean absolute cover/stego difference on the test pairs, 0–255 units.
    pub mae: f64,
    pub acc: Option<f64>,
}

/// Generate `n_train + n_test` pairs, fit a detector on the first part and
/// score the rest.
pub fn evaluate_split(
    g: &Generator<f32>,
    e: Option<&Extractor<f32>>,
    cfg: &RunConfig,
    n_train: usize,
    n_test: usize,
    seed: u64,
    zero_payload: bool,
) -> Result<EvalReport> {
    if n_train + n_test < MIN_EVAL_PAIRS || n_train == 0 || n_test == 0 {
        return Err(Error::InvalidArgument(format!(
            "evaluation needs at least {MIN_EVAL_PAIRS} pairs with a non-empty train and test split, got {n_train} + {n_test}"
        )));
    }
    let all = generate_pairs(g, cfg, n_train + n_test, seed, zero_payload)?;
    let train = all.slice(0, n_train)?;
    let test = all.slice(n_train, n_test)?;
    let detector = train_detector(cfg, &train, seed)?;
    let detection = pe(&scores(&detector, &test.covers)?, &scores(&detector, &test.stegos)?)?;
    let mae = mae_pairs(&test.covers, &test.stegos)?;
    let acc = match e {
        Some(e) if !zero_payload => Some(extraction_accuracy(e, &test)?),
        _ => None,
    };
    Ok(EvalReport {
        n_train,
        n_test,
        zero_payload,
        detection,
        mae,
        acc,
    })
}

/// One sixth of the pairs are held out for testing.
pub fn evaluate(
    g: &Generator<f32>,
    e: Option<&Extractor<f32>>,
    cfg: &RunConfig,
    n_pairs: usize,
    seed: u64,
    zero_payload: bool,
) -> Result<EvalReport> {
    if n_pairs < MIN_EVAL_PAIRS {
        return Err(Error::InvalidArgument(format!(
            "evaluation needs at least {MIN_EVAL_PAIRS} pairs, got {n_pairs}"
        )));
    }
    let n_test = n_pairs / 6;
    evaluate_split(g, e, cfg, n_pairs - n_test, n_test, seed, zero_payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::rng_from_seed;
    use crate::training::engine::tests::tiny_cfg;

    fn cfg() -> RunConfig {
        RunConfig {
            steganalyzer_epochs: 1,
            ..tiny_cfg()
        }
    }

    #[test]
    fn pairs_share_latents_and_are_reproducible() {
        let cfg = cfg();
        let g = Generator::<f32>::new(&cfg, &mut rng_from_seed(1)).unwrap();
        let a = generate_pairs(&g, &cfg, 20, 7, false).unwrap();
        let b = generate_pairs(&g, &cfg, 20, 7, false).unwrap();
        assert_eq!(a.covers.pixels, b.covers.pixels);
        assert_eq!(a.secrets, b.secrets);
        assert_eq!(a.len(), 20);
        let z = generate_pairs(&g, &cfg, 20, 7, true).unwrap();
        assert_eq!(z.covers.pixels, z.stegos.pixels);
    }

    #[test]
    fn too_few_pairs_rejected() {
        let cfg = cfg();
        let g = Generator::<f32>::new(&cfg, &mut rng_from_seed(1)).unwrap();
        assert!(evaluate(&g, None, &cfg, 63, 0, false).is_err());
    }

    #[test]
    fn zero_payload_is_undetectable() {
        let cfg = cfg();
        let g = Generator::<f32>::new(&cfg, &mut rng_from_seed(1)).unwrap();
        let r = evaluate(&g, None, &cfg, 64, 3, true).unwrap();
        assert_eq!(r.detection.pe, 0.5);
        assert_eq!(r.detection.auc, 0.5);
        assert_eq!(r.mae, 0.0);
        assert_eq!((r.n_train, r.n_test), (54, 10));
    }
}
