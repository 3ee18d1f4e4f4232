//! Dual-mode generator: `z → ω` mapping, style-modulated synthesis blocks and
//! a final block that merges either noise (cover) or secret bits (stego) into
//! full-resolution feature maps.

pub mod ops;

use rand::Rng;

use crate::data::{ImageBatch, ImageSource, NoiseField, RunConfig, SecretTensor};
use crate::error::{Error, Result};
use crate::nn::{act, Linear};
use crate::substrate::{layers, Bound, Graph, PadMode, ParamId, ParamSet, Padding, Real, Tensor, Var};

pub use ops::{low_pass, low_pass_kernel, merge_data, modulated_conv, rms_normalize};

const SAME: Padding = Padding::Same(PadMode::Reflect);

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadMode {
    Cover,
    Stego,
}

impl PayloadMode {
    pub fn source(self) -> ImageSource {
        match self {
            PayloadMode::Cover => ImageSource::Cover,
            PayloadMode::Stego => ImageSource::Stego,
        }
    }
}

/// What the final block adds to its feature maps: `[n,1,H,W]` noise or
/// `[n,B,H,W]` bits.
#[derive(Debug, Clone, PartialEq)]
pub struct MergePayload {
    pub mode: PayloadMode,
    pub tensor: Tensor<f32>,
}

impl MergePayload {
    pub fn cover(noise: &[NoiseField]) -> Result<Self> {
        Ok(Self {
            mode: PayloadMode::Cover,
            tensor: NoiseField::stack(noise)?,
        })
    }

    pub fn stego(secrets: &[SecretTensor]) -> Result<Self> {
        Ok(Self {
            mode: PayloadMode::Stego,
            tensor: SecretTensor::stack(secrets)?,
        })
    }

    pub fn len(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Style-modulated convolution with its own `ω → s` affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct ModConv {
    pub weight: ParamId,
    pub affine: Linear,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub demodulate: bool,
}

impl ModConv {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Real>(
        params: &mut ParamSet<T>,
        name: &str,
        latent: usize,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        demodulate: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = params.add_normal(format!("{name}.weight"), &[out_ch, in_ch, kernel, kernel], rng);
        let affine = Linear::new(params, &format!("{name}.affine"), latent, in_ch, 1.0, 1.0, rng);
        let bias = params.add_const(format!("{name}.bias"), &[out_ch], 0.0);
        Self {
            weight,
            affine,
            bias,
            in_ch,
            out_ch,
            kernel,
            demodulate,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var, w: Var) -> Result<Var> {
        let styles = self.affine.forward(g, b, w)?;
        let gain = 1.0 / ((self.in_ch * self.kernel * self.kernel) as f64).sqrt();
        let weight = g.scale(b.var(self.weight), T::of(gain));
        let y = modulated_conv(g, x, weight, styles, self.demodulate, SAME)?;
        layers::add_channel_bias(g, y, b.var(self.bias))
    }
}

/// Two 3×3 modulated convolutions at `resolution`, preceded by an upsample
/// unless this is the 4×4 stage, with one noise plane added after the second.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisBlock {
    pub resolution: usize,
    pub upsample: bool,
    pub conv0: ModConv,
    pub conv1: ModConv,
    pub noise_strength: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecretBlock {
    pub conv_in: ModConv,
    pub conv_mid: ModConv,
    /// Convolutions following merges 1..4: 3×3, 3×3, 1×1, 1×1 to RGB.
    pub stages: [ModConv; 4],
    pub strengths: [ParamId; 4],
}

/// Network layout; parameter values live in [`Generator::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorArch {
    pub resolution: usize,
    pub payload_depth: usize,
    pub latent_dim: usize,
    pub slope: f64,
    pub low_pass: bool,
    pub filter_after_merges: usize,
    pub mapping: Vec<Linear>,
    pub constant: ParamId,
    pub blocks: Vec<SynthesisBlock>,
    pub secret: SecretBlock,
    /// Feature-map side length each parameter acts at, indexed by `ParamId`.
    pub param_resolution: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    pub arch: GeneratorArch,
    pub params: ParamSet<T>,
}

/// Channel width at a given side length: halves per doubling, floored.
pub fn channels_at(cfg: &RunConfig, resolution: usize) -> usize {
    (cfg.generator_base_channels * 4 / resolution).max(cfg.generator_min_channels)
}

impl<T: Real> Generator<T> {
    pub fn new(cfg: &RunConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        Self::new_unchecked(cfg, rng)
    }

    /// Skips config validation so tiny verification shapes can be built; the
    /// secret block alone is usable at resolution 8.
    pub fn new_unchecked(cfg: &RunConfig, rng: &mut impl Rng) -> Result<Self> {
        let h = cfg.resolution;
        let l = cfg.latent_dim;
        let merge_ch = channels_at(cfg, h);
        if merge_ch < cfg.payload_depth {
            return Err(Error::Config(format!(
                "{merge_ch} full-resolution channels cannot carry payload depth {}",
                cfg.payload_depth
            )));
        }
        let mut params = ParamSet::new();
        let mut res_tags: Vec<usize> = Vec::new();
        let mut tag = |params: &ParamSet<T>, res: usize| res_tags.resize(params.len(), res);

        let mapping = (0..cfg.mapping_layers)
            .map(|i| Linear::new(&mut params, &format!("mapping.fc{i}"), l, l, 0.01, 0.0, rng))
            .collect();
        let c4 = channels_at(cfg, 4);
        let constant = params.add_normal("synthesis.const", &[1, c4, 4, 4], rng);
        tag(&params, 4);

        let mut blocks = Vec::new();
        let mut res = 4;
        let mut ch = c4;
        while res <= h / 4 {
            let out = channels_at(cfg, res);
            let name = format!("synthesis.b{res}");
            let conv0 = ModConv::new(&mut params, &format!("{name}.conv0"), l, ch, out, 3, true, rng);
            let conv1 = ModConv::new(&mut params, &format!("{name}.conv1"), l, out, out, 3, true, rng);
            let noise_strength = params.add_const(format!("{name}.noise_strength"), &[1], 0.0);
            tag(&params, res);
            blocks.push(SynthesisBlock {
                resolution: res,
                upsample: res > 4,
                conv0,
                conv1,
                noise_strength,
            });
            ch = out;
            res *= 2;
        }

        let half = channels_at(cfg, h / 2);
        let conv_in = ModConv::new(&mut params, "secret.conv_in", l, ch, half, 1, true, rng);
        tag(&params, h / 4);
        let conv_mid = ModConv::new(&mut params, "secret.conv_mid", l, half, merge_ch, 3, true, rng);
        tag(&params, h / 2);
        let mut stage = |params: &mut ParamSet<T>, i: usize, k: usize, out: usize, demod: bool| {
            ModConv::new(params, &format!("secret.stage{i}"), l, merge_ch, out, k, demod, rng)
        };
        let stages = [
            stage(&mut params, 0, 3, merge_ch, true),
            stage(&mut params, 1, 3, merge_ch, true),
            stage(&mut params, 2, 1, merge_ch, true),
            stage(&mut params, 3, 1, 3, false),
        ];
        let strengths = std::array::from_fn(|i| params.add_const(format!("secret.merge{i}.strength"), &[1], cfg.merge_init));
        tag(&params, h);

        Ok(Self {
            arch: GeneratorArch {
                resolution: h,
                payload_depth: cfg.payload_depth,
                latent_dim: l,
                slope: cfg.leaky_slope,
                low_pass: cfg.low_pass,
                filter_after_merges: cfg.filter_after_merges,
                mapping,
                constant,
                blocks,
                secret: SecretBlock {
                    conv_in,
                    conv_mid,
                    stages,
                    strengths,
                },
                param_resolution: res_tags,
            },
            params,
        })
    }

    pub fn cast<U: Real>(&self) -> Generator<U> {
        Generator {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    /// Feature-map side length that parameter `id` acts at.
    pub fn param_resolution(&self, id: ParamId) -> usize {
        self.arch.param_resolution[id.index()]
    }

    /// Shapes of the per-block noise planes for a batch of `n`.
    pub fn noise_shapes(&self, n: usize) -> Vec<Vec<usize>> {
        self.arch
            .blocks
            .iter()
            .map(|b| vec![n, 1, b.resolution, b.resolution])
            .collect()
    }

    /// `ω`: RMS-normalised `z` through the fully connected stack.
    pub fn map_latent(&self, g: &mut Graph<T>, b: &Bound, z: Var) -> Result<Var> {
        let s = g.shape(z);
        if s.len() != 2 || s[1] != self.arch.latent_dim {
            return Err(Error::shape("map_latent", s, &[0, self.arch.latent_dim]));
        }
        let mut x = rms_normalize(g, z)?;
        for fc in &self.arch.mapping {
            let y = fc.forward(g, b, x)?;
            x = act(g, y, self.arch.slope);
        }
        Ok(x)
    }

    pub fn general_block(&self, g: &mut Graph<T>, b: &Bound, index: usize, x: Var, w: Var, noise: Var) -> Result<Var> {
        let blk = &self.arch.blocks[index];
        let x = if blk.upsample { layers::upsample2x(g, x)? } else { x };
        let ns = g.shape(noise).to_vec();
        let xs = g.shape(x).to_vec();
        if ns.len() != 4 || ns[1] != 1 || ns[0] != xs[0] || ns[2..] != xs[2..] {
            return Err(Error::shape("general_block noise", &ns, &[xs[0], 1, xs[2], xs[3]]));
        }
        let y = blk.conv0.forward(g, b, x, w)?;
        let y = act(g, y, self.arch.slope);
        let y = blk.conv1.forward(g, b, y, w)?;
        let strength = g.reshape(b.var(blk.noise_strength), &[1, 1, 1, 1])?;
        let scaled = g.mul(noise, strength)?;
        let y = g.add(y, scaled)?;
        Ok(act(g, y, self.arch.slope))
    }

    /// Quarter-resolution features to a `[n,3,H,W]` image.
    pub fn secret_block(&self, g: &mut Graph<T>, b: &Bound, x: Var, w: Var, payload: Var) -> Result<Var> {
        let sb = &self.arch.secret;
        let (xs, ps) = (g.shape(x).to_vec(), g.shape(payload).to_vec());
        let h = self.arch.resolution;
        if ps.len() != 4 || ps[2] != h || ps[3] != h || ps[0] != xs[0] {
            return Err(Error::shape("secret_block payload", &ps, &[xs[0], self.arch.payload_depth, h, h]));
        }
        if ps[1] != 1 && ps[1] != self.arch.payload_depth {
            return Err(Error::shape("secret_block payload", &ps, &[xs[0], self.arch.payload_depth, h, h]));
        }
        let slope = self.arch.slope;
        let y = sb.conv_in.forward(g, b, x, w)?;
        let y = act(g, y, slope);
        let y = layers::upsample2x(g, y)?;
        let y = sb.conv_mid.forward(g, b, y, w)?;
        let y = act(g, y, slope);
        let mut y = layers::upsample2x(g, y)?;
        for (i, conv) in sb.stages.iter().enumerate() {
            if self.arch.low_pass && self.arch.filter_after_merges == i {
                y = low_pass(g, y)?;
            }
            y = merge_data(g, y, payload, b.var(sb.strengths[i]))?;
            y = conv.forward(g, b, y, w)?;
            if i < 3 {
                y = act(g, y, slope);
            }
        }
        if self.arch.low_pass && self.arch.filter_after_merges == 4 {
            y = low_pass(g, y)?;
        }
        Ok(y)
    }

    /// Everything after the mapping network.
    pub fn synthesize(&self, g: &mut Graph<T>, b: &Bound, w: Var, noise: &[Var], payload: Var) -> Result<Var> {
        if noise.len() != self.arch.blocks.len() {
            return Err(Error::InvalidArgument(format!(
                "generator has {} noise planes, got {}",
                self.arch.blocks.len(),
                noise.len()
            )));
        }
        let n = g.shape(w)[0];
        let c = self.params.get(self.arch.constant).value.shape()[1];
        let mut x = g.broadcast_to(b.var(self.arch.constant), &[n, c, 4, 4])?;
        for (i, &nz) in noise.iter().enumerate() {
            x = self.general_block(g, b, i, x, w, nz)?;
        }
        self.secret_block(g, b, x, w, payload)
    }

    pub fn forward(&self, g: &mut Graph<T>, b: &Bound, z: Var, noise: &[Var], payload: Var) -> Result<Var> {
        let w = self.map_latent(g, b, z)?;
        self.synthesize(g, b, w, noise, payload)
    }
}

impl Generator<f32> {
    /// Inference without gradients. `z` is `[n, latent_dim]`, `noise` holds one
    /// tensor per synthesis block.
    pub fn generate(&self, z: &Tensor<f32>, payload: &MergePayload, noise: &[Tensor<f32>]) -> Result<ImageBatch> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let zv = g.leaf(z.clone());
        let nv: Vec<Var> = noise.iter().map(|t| g.leaf(t.clone())).collect();
        let pv = g.leaf(payload.tensor.clone());
        let y = self.forward(&mut g, &b, zv, &nv, pv)?;
        ImageBatch::new(g.value(y).clone(), payload.mode.source())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{noise_from_rng, rng_from_seed, secret_from_rng};
    use crate::substrate::check_gradients;

    fn small_cfg() -> RunConfig {
        RunConfig {
            resolution: 16,
            payload_depth: 2,
            latent_dim: 8,
            mapping_layers: 2,
            generator_base_channels: 8,
            generator_min_channels: 4,
            ..RunConfig::default()
        }
    }

    fn zero_noise(gen: &Generator<f32>, n: usize) -> Vec<Tensor<f32>> {
        gen.noise_shapes(n).iter().map(|s| Tensor::zeros(s)).collect()
    }

    #[test]
    fn layout_and_resolution_tags() {
        let cfg = RunConfig::default();
        let gen = Generator::<f32>::new(&cfg, &mut rng_from_seed(0)).unwrap();
        assert_eq!(gen.arch.blocks.len(), 2);
        assert_eq!(gen.noise_shapes(3), vec![vec![3, 1, 4, 4], vec![3, 1, 8, 8]]);
        assert_eq!(gen.arch.param_resolution.len(), gen.params.len());
        let res = |name: &str| gen.param_resolution(gen.params.id(name).unwrap());
        assert_eq!(res("mapping.fc0.weight"), 4);
        assert_eq!(res("synthesis.b8.conv1.affine.bias"), 8);
        assert_eq!(res("secret.conv_in.weight"), 8);
        assert_eq!(res("secret.conv_mid.weight"), 16);
        assert_eq!(res("secret.stage3.weight"), 32);
        assert_eq!(res("secret.merge2.strength"), 32);
        assert_eq!(gen.params.get(gen.params.id("secret.stage0.weight").unwrap()).value.shape(), &[16, 16, 3, 3]);
        assert_eq!(gen.params.get(gen.arch.constant).value.shape(), &[1, 128, 4, 4]);
    }

    #[test]
    fn modes_agree_at_zero_payload() {
        let cfg = small_cfg();
        let gen = Generator::<f32>::new(&cfg, &mut rng_from_seed(1)).unwrap();
        let mut rng = rng_from_seed(2);
        let z = crate::data::gaussian_tensor(&mut rng, &[2, 8], 1.0);
        let noise = zero_noise(&gen, 2);
        let cover = MergePayload::cover(&[NoiseField::zeros(16, 16), NoiseField::zeros(16, 16)]).unwrap();
        let stego = MergePayload::stego(&[SecretTensor::zeros(2, 16, 16), SecretTensor::zeros(2, 16, 16)]).unwrap();
        let a = gen.generate(&z, &cover, &noise).unwrap();
        let b = gen.generate(&z, &stego, &noise).unwrap();
        assert_eq!(a.pixels, b.pixels);
        assert_eq!((a.source, b.source), (ImageSource::Cover, ImageSource::Stego));
        assert_eq!(a.pixels.shape(), &[2, 3, 16, 16]);
    }

    #[test]
    fn single_bit_changes_output() {
        let cfg = small_cfg();
        let gen = Generator::<f32>::new(&cfg, &mut rng_from_seed(1)).unwrap();
        let mut rng = rng_from_seed(3);
        let z = crate::data::gaussian_tensor(&mut rng, &[1, 8], 1.0);
        let d = secret_from_rng(&mut rng, 2, 16, 16);
        let mut bits = d.bits().to_vec();
        bits[37] ^= 1;
        let d2 = SecretTensor::new(2, 16, 16, bits).unwrap();
        let noise = zero_noise(&gen, 1);
        let a = gen.generate(&z, &MergePayload::stego(&[d]).unwrap(), &noise).unwrap();
        let b = gen.generate(&z, &MergePayload::stego(&[d2]).unwrap(), &noise).unwrap();
        assert!(a.pixels.max_abs_diff(&b.pixels).unwrap() > 0.0);
    }

    #[test]
    fn latent_scale_invariance_and_zero_input() {
        let cfg = small_cfg();
        let gen = Generator::<f64>::new(&cfg, &mut rng_from_seed(4)).unwrap();
        let mut g = Graph::new();
        let b = gen.params.bind(&mut g);
        let zt = Tensor::from_fn(&[1, 8], |i| (i as f64 * 0.7).sin());
        let z1 = g.leaf(zt.clone());
        let z2 = g.leaf(zt.map(|v| 2.0 * v));
        let w1 = gen.map_latent(&mut g, &b, z1).unwrap();
        let w2 = gen.map_latent(&mut g, &b, z2).unwrap();
        // exact up to the epsilon inside the normalisation
        assert!(g.value(w1).max_abs_diff(g.value(w2)).unwrap() < 1e-7);
        // biases start at zero, so a zero latent maps to zero
        let z0 = g.leaf(Tensor::zeros(&[1, 8]));
        let w0 = gen.map_latent(&mut g, &b, z0).unwrap();
        assert!(g.value(w0).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_noise_strength_ignores_noise() {
        let cfg = small_cfg();
        let gen = Generator::<f32>::new(&cfg, &mut rng_from_seed(5)).unwrap();
        let mut rng = rng_from_seed(6);
        let z = crate::data::gaussian_tensor(&mut rng, &[1, 8], 1.0);
        let payload = MergePayload::cover(&[noise_from_rng(&mut rng, 16, 16, 1.0).unwrap()]).unwrap();
        let a = gen.generate(&z, &payload, &zero_noise(&gen, 1)).unwrap();
        let other: Vec<_> = gen.noise_shapes(1).iter().map(|s| crate::data::gaussian_tensor(&mut rng, s, 1.0)).collect();
        let b = gen.generate(&z, &payload, &other).unwrap();
        assert_eq!(a.pixels, b.pixels);
    }

    #[test]
    fn payload_size_mismatch_rejected() {
        let gen = Generator::<f32>::new(&small_cfg(), &mut rng_from_seed(1)).unwrap();
        let z = Tensor::zeros(&[1, 8]);
        let bad = MergePayload::stego(&[SecretTensor::zeros(2, 8, 8)]).unwrap();
        assert!(gen.generate(&z, &bad, &zero_noise(&gen, 1)).is_err());
    }

    #[test]
    fn gradients_of_mapping_and_blocks() {
        let cfg = RunConfig {
            latent_dim: 4,
            generator_base_channels: 2,
            generator_min_channels: 2,
            payload_depth: 2,
            ..small_cfg()
        };
        let mut gen = Generator::<f64>::new(&cfg, &mut rng_from_seed(7)).unwrap();
        let ns = gen.arch.blocks[0].noise_strength;
        gen.params.get_mut(ns).value = Tensor::full(&[1], 0.3);
        let mut rng = rng_from_seed(8);
        let z = crate::data::gaussian_tensor(&mut rng, &[2, 4], 1.0).cast::<f64>();
        let r = check_gradients(
            "map_latent",
            |g, v| {
                let b = gen.params.bind(g);
                gen.map_latent(g, &b, v[0])
            },
            &[z],
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");

        let x = crate::data::gaussian_tensor(&mut rng, &[1, 2, 4, 4], 1.0).cast::<f64>();
        let w = crate::data::gaussian_tensor(&mut rng, &[1, 4], 1.0).cast::<f64>();
        let n = crate::data::gaussian_tensor(&mut rng, &[1, 1, 4, 4], 1.0).cast::<f64>();
        let s = Tensor::full(&[1], 0.3);
        let r = check_gradients(
            "general_block",
            |g, v| {
                let mut b = gen.params.bind(g);
                b = b.with(ns, v[3]);
                gen.general_block(g, &b, 0, v[0], v[1], v[2])
            },
            &[x, w, n, s],
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}
