use serde::{Deserialize, Serialize};

use crate::adversaries::{Discriminator, Steganalyzer};
use crate::data::{derived_rng, gaussian_tensor, secret_from_rng, ImageBatch, RunConfig, SecretTensor};
use crate::error::{Error, Result};
use crate::extractor::{binarize, batch_accuracy, Extractor};
use crate::generator::Generator;
use crate::substrate::{Graph, Tensor, Var};

use super::hgd::hgd_factor;
use super::losses::{
    adv_discriminator_loss, adv_generator_loss, ema, extraction_loss, path_length_penalty, path_lengths, r1_penalty,
    steg_generator_loss, steganalyzer_loss,
};
use super::optim::{Adam, AdamConfig};

/// Random-stream tags for [`derived_rng`].
pub(crate) const INIT_STREAM: u64 = 0x1417;
pub(crate) const STEP_STREAM: u64 = 0x57e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
}

impl LossWeights {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            lambda1: cfg.lambda1,
            lambda2: cfg.lambda2,
            alpha: cfg.r1_alpha,
            beta: cfg.r1_beta,
            delta: cfg.hgd_delta,
        }
    }
}

/// Scalar outputs of one training step. Lazily applied regularisers and
/// disabled terms are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub step: u64,
    pub loss_g: f64,
    pub adv_g: f64,
    pub steg_g: Option<f64>,
    pub path_length: Option<f64>,
    pub pl_penalty: Option<f64>,
    pub loss_d: f64,
    pub r1: Option<f64>,
    pub loss_s: Option<f64>,
    pub loss_e: f64,
    /// Bit accuracy on the noisy stego images of the extraction phase.
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub pl_mean: f64,
    pub seed: u64,
    pub history: Vec<StepLosses>,
}

/// Everything random in one step, drawn up front from the step's own stream.
#[derive(Debug, Clone)]
pub struct StepSample {
    pub z: Tensor<f32>,
    pub secrets: Vec<SecretTensor>,
    pub secret: Tensor<f32>,
    pub cover_noise: Tensor<f32>,
    pub block_noise: Vec<Tensor<f32>>,
    pub psi: Tensor<f32>,
    pub image_noise: Tensor<f32>,
}

impl StepSample {
    pub fn draw(cfg: &RunConfig, g: &Generator<f32>, seed: u64, step: u64) -> Result<Self> {
        let mut rng = derived_rng(seed, STEP_STREAM, step);
        let (m, h) = (cfg.batch_size, cfg.resolution);
        let z = gaussian_tensor(&mut rng, &[m, cfg.latent_dim], 1.0);
        let secrets: Vec<SecretTensor> = (0..m).map(|_| secret_from_rng(&mut rng, cfg.payload_depth, h, h)).collect();
        let secret = SecretTensor::stack(&secrets)?;
        let cover_noise = gaussian_tensor(&mut rng, &[m, 1, h, h], cfg.sigma_train);
        let block_noise = g.noise_shapes(m).iter().map(|s| gaussian_tensor(&mut rng, s, 1.0)).collect();
        // unit variance per image rather than per pixel keeps path lengths O(1)
        let psi = gaussian_tensor(&mut rng, &[m, 3, h, h], 1.0 / h as f64);
        let image_noise = gaussian_tensor(&mut rng, &[m, 3, h, h], cfg.extract_noise_std);
        Ok(Self {
            z,
            secrets,
            secret,
            cover_noise,
            block_noise,
            psi,
            image_noise,
        })
    }
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub generator: Generator<f32>,
    pub discriminator: Discriminator<f32>,
    pub steganalyzer: Steganalyzer<f32>,
    pub extractor: Extractor<f32>,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub opt_s: Adam,
    pub opt_e: Adam,
    pub state: TrainState,
}

fn finite(name: &str, v: f64, step: u64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: name.to_string(),
            location: Some(format!("step {step}")),
        })
    }
}

struct GeneratorPhase {
    covers: Tensor<f32>,
    stegos: Tensor<f32>,
    loss: f64,
    adv: f64,
    steg: Option<f64>,
    path_length: Option<f64>,
    pl_penalty: Option<f64>,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed;
        let generator = Generator::new(cfg, &mut derived_rng(seed, INIT_STREAM, 0))?;
        let discriminator = Discriminator::new(cfg, &mut derived_rng(seed, INIT_STREAM, 1))?;
        let steganalyzer = Steganalyzer::new(cfg, &mut derived_rng(seed, INIT_STREAM, 2))?;
        let extractor = Extractor::new(cfg, &mut derived_rng(seed, INIT_STREAM, 3))?;
        let adam = AdamConfig {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        };
        Ok(Self {
            opt_g: Adam::new(adam, &generator.params),
            opt_d: Adam::new(adam, &discriminator.params),
            opt_s: Adam::new(adam, &steganalyzer.params),
            opt_e: Adam::new(adam, &extractor.params),
            cfg: cfg.clone(),
            generator,
            discriminator,
            steganalyzer,
            extractor,
            state: TrainState {
                step: 0,
                pl_mean: 0.0,
                seed,
                history: Vec::new(),
            },
        })
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights::from_config(&self.cfg)
    }

    fn is_lazy_step(&self) -> bool {
        self.state.step % self.cfg.lazy_interval as u64 == 0
    }

    /// Alternating updates of one step: generator, discriminator,
    /// steganalyzer, then generator and extractor together on the extraction
    /// loss with decayed low-resolution gradients.
    pub fn train_step(&mut self, real: &ImageBatch) -> Result<StepLosses> {
        let step = self.state.step;
        let h = self.cfg.resolution;
        if real.pixels.shape() != [self.cfg.batch_size, 3, h, h] {
            return Err(Error::shape(
                "train_step real batch",
                real.pixels.shape(),
                &[self.cfg.batch_size, 3, h, h],
            ));
        }
        let sample = StepSample::draw(&self.cfg, &self.generator, self.state.seed, step)?;
        let lazy = self.is_lazy_step();

        let gp = self.generator_phase(&sample, lazy)?;
        self.opt_g.step(&mut self.generator.params)?;

        let (loss_d, r1) = self.discriminator_phase(&real.pixels, &gp.stegos, lazy)?;
        self.opt_d.step(&mut self.discriminator.params)?;

        let loss_s = if self.cfg.use_steganalyzer {
            let l = self.steganalyzer_phase(&gp.covers, &gp.stegos)?;
            self.opt_s.step(&mut self.steganalyzer.params)?;
            Some(l)
        } else {
            None
        };

        let (loss_e, acc) = self.extraction_gradients(&sample, self.cfg.effective_hgd_delta())?;
        self.opt_g.step(&mut self.generator.params)?;
        self.opt_e.step(&mut self.extractor.params)?;

        let losses = StepLosses {
            step,
            loss_g: gp.loss,
            adv_g: gp.adv,
            steg_g: gp.steg,
            path_length: gp.path_length,
            pl_penalty: gp.pl_penalty,
            loss_d,
            r1,
            loss_s,
            loss_e,
            acc,
        };
        self.state.step += 1;
        self.state.history.push(losses.clone());
        Ok(losses)
    }

    fn generator_phase(&mut self, s: &StepSample, lazy: bool) -> Result<GeneratorPhase> {
        let step = self.state.step;
        let cfg = &self.cfg;
        let gen = &self.generator;
        let mut g = Graph::new();
        let gb = gen.params.bind(&mut g);
        let db = self.discriminator.params.bind(&mut g);
        let z = g.leaf(s.z.clone());
        let noise: Vec<Var> = s.block_noise.iter().map(|t| g.leaf(t.clone())).collect();
        let w = gen.map_latent(&mut g, &gb, z)?;
        let cover_payload = g.leaf(s.cover_noise.clone());
        let secret = g.leaf(s.secret.clone());
        let covers = gen.synthesize(&mut g, &gb, w, &noise, cover_payload)?;
        let stegos = gen.synthesize(&mut g, &gb, w, &noise, secret)?;

        let fake_logits = self.discriminator.discriminate(&mut g, &db, stegos)?;
        let adv = adv_generator_loss(&mut g, fake_logits, cfg.adv_loss)?;
        let mut loss = adv;

        let steg = if cfg.use_steganalyzer {
            let sb = self.steganalyzer.params.bind(&mut g);
            let sc = self.steganalyzer.steganalyze(&mut g, &sb, covers)?;
            let ss = self.steganalyzer.steganalyze(&mut g, &sb, stegos)?;
            let l = steg_generator_loss(&mut g, sc, ss)?;
            let weighted = g.scale(l, cfg.lambda1 as f32);
            loss = g.add(loss, weighted)?;
            Some(finite("steg_g", f64::from(g.scalar_value(l)), step)?)
        } else {
            None
        };

        let (mut path_length, mut pl_penalty) = (None, None);
        if lazy && cfg.lambda2 > 0.0 {
            let a = path_lengths(&mut g, stegos, w, &s.psi)?;
            let mean_a = f64::from(g.value(a).sum()) / s.z.shape()[0] as f64;
            let mean_a = finite("path_length", mean_a, step)?;
            self.state.pl_mean = ema(self.state.pl_mean, mean_a, cfg.pl_decay);
            let pen = path_length_penalty(&mut g, a, self.state.pl_mean)?;
            let weighted = g.scale(pen, (cfg.lambda2 * cfg.lazy_interval as f64) as f32);
            loss = g.add(loss, weighted)?;
            path_length = Some(mean_a);
            pl_penalty = Some(finite("pl_penalty", f64::from(g.scalar_value(pen)), step)?);
        }

        let loss_v = finite("loss_g", f64::from(g.scalar_value(loss)), step)?;
        let adv_v = f64::from(g.scalar_value(adv));
        let covers_t = g.value(covers).clone();
        let stegos_t = g.value(stegos).clone();
        self.generator.params.accumulate_grads(&mut g, &gb, loss)?;
        Ok(GeneratorPhase {
            covers: covers_t,
            stegos: stegos_t,
            loss: loss_v,
            adv: adv_v,
            steg,
            path_length,
            pl_penalty,
        })
    }

    fn discriminator_phase(&mut self, real: &Tensor<f32>, fakes: &Tensor<f32>, lazy: bool) -> Result<(f64, Option<f64>)> {
        let step = self.state.step;
        let d = &self.discriminator;
        let mut g = Graph::new();
        let db = d.params.bind(&mut g);
        let x_real = g.leaf(real.clone());
        let x_fake = g.leaf(fakes.clone());
        let real_logits = d.discriminate(&mut g, &db, x_real)?;
        let fake_logits = d.discriminate(&mut g, &db, x_fake)?;
        let mut loss = adv_discriminator_loss(&mut g, real_logits, fake_logits)?;
        let r1 = if lazy && self.cfg.r1_alpha > 0.0 {
            let r1 = r1_penalty(&mut g, real_logits, x_real, self.cfg.r1_beta)?;
            let weighted = g.scale(r1, (self.cfg.r1_alpha * self.cfg.lazy_interval as f64) as f32);
            loss = g.add(loss, weighted)?;
            Some(finite("r1", f64::from(g.scalar_value(r1)), step)?)
        } else {
            None
        };
        let v = finite("loss_d", f64::from(g.scalar_value(loss)), step)?;
        self.discriminator.params.accumulate_grads(&mut g, &db, loss)?;
        Ok((v, r1))
    }

    fn steganalyzer_phase(&mut self, covers: &Tensor<f32>, stegos: &Tensor<f32>) -> Result<f64> {
        let s = &self.steganalyzer;
        let mut g = Graph::new();
        let sb = s.params.bind(&mut g);
        let c = g.leaf(covers.clone());
        let st = g.leaf(stegos.clone());
        let pc = s.steganalyze(&mut g, &sb, c)?;
        let ps = s.steganalyze(&mut g, &sb, st)?;
        let loss = steganalyzer_loss(&mut g, pc, ps)?;
        let v = finite("loss_s", f64::from(g.scalar_value(loss)), self.state.step)?;
        self.steganalyzer.params.accumulate_grads(&mut g, &sb, loss)?;
        Ok(v)
    }

    /// Accumulate extraction-loss gradients into the generator and extractor,
    /// scaling each generator parameter by its decay factor when `delta` is
    /// given. Returns the loss and the bit accuracy of the batch.
    pub fn extraction_gradients(&mut self, s: &StepSample, delta: Option<f64>) -> Result<(f64, f64)> {
        let step = self.state.step;
        let gen = &self.generator;
        let mut g = Graph::new();
        let gb = gen.params.bind(&mut g);
        let eb = self.extractor.params.bind(&mut g);
        let z = g.leaf(s.z.clone());
        let noise: Vec<Var> = s.block_noise.iter().map(|t| g.leaf(t.clone())).collect();
        let secret = g.leaf(s.secret.clone());
        let stegos = gen.forward(&mut g, &gb, z, &noise, secret)?;
        let perturb = g.leaf(s.image_noise.clone());
        let noisy = g.add(stegos, perturb)?;
        let logits = self.extractor.extract_logits(&mut g, &eb, noisy)?;
        let loss = extraction_loss(&mut g, logits, secret, self.cfg.extract_loss)?;
        let v = finite("loss_e", f64::from(g.scalar_value(loss)), step)?;
        let acc = batch_accuracy(&s.secrets, &binarize(g.value(logits))?)?;

        let before: Vec<Tensor<f32>> = self.generator.params.iter().map(|(_, _, p)| p.grad.clone()).collect();
        self.generator.params.accumulate_grads(&mut g, &gb, loss)?;
        self.extractor.params.accumulate_grads(&mut g, &eb, loss)?;
        if let Some(delta) = delta {
            let h = self.cfg.resolution;
            let factors: Vec<f32> = self
                .generator
                .params
                .iter()
                .map(|(id, _, _)| {
                    let r = self.generator.param_resolution(id);
                    hgd_factor(r, r, h, h, delta) as f32
                })
                .collect();
            for ((p, f), old) in self.generator.params.params_mut().zip(factors).zip(before) {
                // only the contribution of this loss is decayed
                p.grad = p.grad.zip_map(&old, |total, prior| prior + (total - prior) * f)?;
            }
        }
        Ok((v, acc))
    }
}
