//! Real/fake discriminator, cover/stego steganalyzer and detection metrics.

pub mod metrics;

use rand::Rng;

use crate::data::{ImageBatch, RunConfig};
use crate::error::{Error, Result};
use crate::nn::{act, Conv, Linear};
use crate::substrate::{layers, Bound, Graph, PadMode, ParamSet, Padding, Real, Tensor, Var};

pub use metrics::{mae_pairs, pe, roc_auc, DetectionReport, RocPoint, ThresholdRates};

const SAME: Padding = Padding::Same(PadMode::Reflect);

fn check_image<T: Real>(g: &Graph<T>, x: Var, resolution: usize, op: &'static str) -> Result<usize> {
    let s = g.shape(x);
    if s.len() != 4 || s[1] != 3 || s[2] != resolution || s[3] != resolution {
        return Err(Error::shape(op, s, &[s.first().copied().unwrap_or(1), 3, resolution, resolution]));
    }
    Ok(s[0])
}

/// Residual downsampling block: two 3×3 convs then 2×2 mean pool, plus a
/// pooled 1×1 skip; the sum is scaled by `1/√2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub conv0: Conv,
    pub conv1: Conv,
    /// `None` for an identity skip.
    pub skip: Option<Conv>,
    pub pool: bool,
}

impl ResBlock {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Real>(
        params: &mut ParamSet<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        pool: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let conv0 = Conv::new(params, &format!("{name}.conv0"), in_ch, in_ch, 3, true, rng);
        let conv1 = Conv::new(params, &format!("{name}.conv1"), in_ch, out_ch, 3, true, rng);
        let skip = (pool || in_ch != out_ch).then(|| Conv::new(params, &format!("{name}.skip"), in_ch, out_ch, 1, false, rng));
        Self {
            conv0,
            conv1,
            skip,
            pool,
        }
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, b: &Bound, x: Var, slope: f64) -> Result<Var> {
        let y = self.conv0.forward(g, b, x, SAME)?;
        let y = act(g, y, slope);
        let y = self.conv1.forward(g, b, y, SAME)?;
        let mut y = act(g, y, slope);
        let mut s = x;
        if self.pool {
            y = layers::mean_pool2x(g, y)?;
            s = layers::mean_pool2x(g, s)?;
        }
        if let Some(skip) = &self.skip {
            s = skip.forward(g, b, s, SAME)?;
        }
        let sum = g.add(y, s)?;
        Ok(g.scale(sum, T::of(std::f64::consts::FRAC_1_SQRT_2)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorArch {
    pub resolution: usize,
    pub slope: f64,
    pub from_rgb: Conv,
    pub blocks: Vec<ResBlock>,
    pub conv_final: Conv,
    pub fc: Linear,
    pub out: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    pub arch: DiscriminatorArch,
    pub params: ParamSet<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn new(cfg: &RunConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::new_unchecked(cfg, rng))
    }

    /// Skips config validation so tiny verification shapes can be built.
    pub fn new_unchecked(cfg: &RunConfig, rng: &mut impl Rng) -> Self {
        let h = cfg.resolution;
        let width = |res: usize| (cfg.discriminator_base_channels * (h / res)).min(cfg.discriminator_max_channels.max(1));
        let mut params = ParamSet::new();
        let from_rgb = Conv::new(&mut params, "from_rgb", 3, width(h), 1, true, rng);
        let mut blocks = Vec::new();
        let mut res = h;
        while res > 4 {
            blocks.push(ResBlock::new(&mut params, &format!("b{res}"), width(res), width(res / 2), true, rng));
            res /= 2;
        }
        let c = width(4);
        let conv_final = Conv::new(&mut params, "b4.conv", c, c, 3, true, rng);
        let fc = Linear::new(&mut params, "b4.fc", c * 16, c, 1.0, 0.0, rng);
        let out = Linear::new(&mut params, "out", c, 1, 1.0, 0.0, rng);
        Self {
            arch: DiscriminatorArch {
                resolution: h,
                slope: cfg.leaky_slope,
                from_rgb,
                blocks,
                conv_final,
                fc,
                out,
            },
            params,
        }
    }

    pub fn cast<U: Real>(&self) -> Discriminator<U> {
        Discriminator {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    /// One real-vs-generated logit per image, `[n, 1]`.
    pub fn discriminate(&self, g: &mut Graph<T>, b: &Bound, img: Var) -> Result<Var> {
        let n = check_image(g, img, self.arch.resolution, "discriminate")?;
        let slope = self.arch.slope;
        let x = self.arch.from_rgb.forward(g, b, img, SAME)?;
        let mut x = act(g, x, slope);
        for blk in &self.arch.blocks {
            x = blk.forward(g, b, x, slope)?;
        }
        let y = self.arch.conv_final.forward(g, b, x, SAME)?;
        let y = act(g, y, slope);
        let flat = g.shape(y).iter().skip(1).product();
        let y = g.reshape(y, &[n, flat])?;
        let y = self.arch.fc.forward(g, b, y)?;
        let y = act(g, y, slope);
        self.arch.out.forward(g, b, y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteganalyzerArch {
    pub resolution: usize,
    pub slope: f64,
    pub stem: Conv,
    pub blocks: Vec<ResBlock>,
    pub out: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Steganalyzer<T> {
    pub arch: SteganalyzerArch,
    pub params: ParamSet<T>,
}

/// Blocks 0 and 1 keep full resolution; blocks 2, 4, 6 pool and widen.
const POOLED: [bool; 8] = [false, false, true, false, true, false, true, false];

impl<T: Real> Steganalyzer<T> {
    pub fn new(cfg: &RunConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let cap = cfg.steganalyzer_max_channels.max(1);
        let mut params = ParamSet::new();
        let mut ch = cfg.steganalyzer_base_channels.min(cap);
        let stem = Conv::new(&mut params, "stem", 3, ch, 3, true, rng);
        let mut blocks = Vec::new();
        for (i, &pool) in POOLED.iter().enumerate() {
            let out = if pool { (ch * 2).min(cap) } else { ch };
            blocks.push(ResBlock::new(&mut params, &format!("block{i}"), ch, out, pool, rng));
            ch = out;
        }
        let out = Linear::new(&mut params, "out", ch, 2, 1.0, 0.0, rng);
        Ok(Self {
            arch: SteganalyzerArch {
                resolution: cfg.resolution,
                slope: cfg.leaky_slope,
                stem,
                blocks,
                out,
            },
            params,
        })
    }

    pub fn cast<U: Real>(&self) -> Steganalyzer<U> {
        Steganalyzer {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    /// Feature map after `blocks` residual blocks; exposed for shape probes.
    pub fn features(&self, g: &mut Graph<T>, b: &Bound, img: Var, blocks: usize) -> Result<Var> {
        check_image(g, img, self.arch.resolution, "steganalyze")?;
        let x = self.arch.stem.forward(g, b, img, SAME)?;
        let mut x = act(g, x, self.arch.slope);
        for blk in self.arch.blocks.iter().take(blocks) {
            x = blk.forward(g, b, x, self.arch.slope)?;
        }
        Ok(x)
    }

    /// Two class logits per image, `[n, 2]`.
    pub fn logits(&self, g: &mut Graph<T>, b: &Bound, img: Var) -> Result<Var> {
        let x = self.features(g, b, img, self.arch.blocks.len())?;
        let x = layers::global_avg_pool(g, x)?;
        self.arch.out.forward(g, b, x)
    }

    /// `[P(cover), P(stego)]` per image.
    pub fn steganalyze(&self, g: &mut Graph<T>, b: &Bound, img: Var) -> Result<Var> {
        let l = self.logits(g, b, img)?;
        softmax2(g, l)
    }
}

impl Steganalyzer<f32> {
    /// Stego-class probability of every image.
    pub fn stego_scores(&self, img: &ImageBatch) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g);
        let x = g.leaf(img.pixels.clone());
        let p = self.steganalyze(&mut g, &b, x)?;
        Ok(g.value(p).data().chunks(2).map(|r| f64::from(r[1])).collect())
    }
}

/// Two-class softmax, `σ(l_k − l_{1−k})`, from `[n, 2]` logits.
pub fn softmax2<T: Real>(g: &mut Graph<T>, logits: Var) -> Result<Var> {
    let s = g.shape(logits);
    if s.len() != 2 || s[1] != 2 {
        return Err(Error::shape("softmax2", s, &[s.first().copied().unwrap_or(1), 2]));
    }
    let diff = g.leaf(Tensor::new(vec![2, 2], vec![T::one(), -T::one(), -T::one(), T::one()])?);
    let d = g.matmul(logits, diff, false, false)?;
    Ok(g.sigmoid(d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::rng_from_seed;
    use crate::nn::fill_params;
    use crate::substrate::check_gradients;

    fn cfg() -> RunConfig {
        RunConfig {
            resolution: 16,
            discriminator_base_channels: 4,
            discriminator_max_channels: 8,
            steganalyzer_base_channels: 4,
            steganalyzer_max_channels: 8,
            ..RunConfig::default()
        }
    }

    #[test]
    fn discriminator_shapes_and_bias() {
        let mut d = Discriminator::<f32>::new(&cfg(), &mut rng_from_seed(1)).unwrap();
        let mut g = Graph::new();
        let b = d.params.bind(&mut g);
        let x = g.leaf(crate::data::gaussian_tensor(&mut rng_from_seed(2), &[3, 3, 16, 16], 1.0));
        let y = d.discriminate(&mut g, &b, x).unwrap();
        assert_eq!(g.shape(y), &[3, 1]);
        assert!(g.value(y).is_finite());
        fill_params(&mut d.params, 0.0);
        let bias = d.arch.out.bias;
        d.params.get_mut(bias).value = Tensor::full(&[1], 0.75);
        let mut g = Graph::new();
        let b = d.params.bind(&mut g);
        let x = g.leaf(Tensor::full(&[2, 3, 16, 16], 0.5));
        let y = d.discriminate(&mut g, &b, x).unwrap();
        assert_eq!(g.value(y).data(), &[0.75, 0.75]);
        let wrong = g.leaf(Tensor::zeros(&[1, 3, 8, 8]));
        assert!(d.discriminate(&mut g, &b, wrong).is_err());
    }

    #[test]
    fn steganalyzer_probabilities() {
        let s = Steganalyzer::<f32>::new(&cfg(), &mut rng_from_seed(3)).unwrap();
        let mut g = Graph::new();
        let b = s.params.bind(&mut g);
        let x = g.leaf(crate::data::gaussian_tensor(&mut rng_from_seed(4), &[2, 3, 16, 16], 1.0));
        let p = s.steganalyze(&mut g, &b, x).unwrap();
        for row in g.value(p).data().chunks(2) {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
        let f2 = s.features(&mut g, &b, x, 2).unwrap();
        assert_eq!(&g.shape(f2)[2..], &[16, 16]);
        let f8 = s.features(&mut g, &b, x, 8).unwrap();
        assert_eq!(&g.shape(f8)[2..], &[2, 2]);
        let eq = g.leaf(Tensor::new(vec![1, 2], vec![0.3, 0.3]).unwrap());
        let p = softmax2(&mut g, eq).unwrap();
        assert_eq!(g.value(p).data(), &[0.5, 0.5]);
    }

    #[test]
    fn discriminator_input_gradient() {
        let c = RunConfig {
            resolution: 8,
            discriminator_base_channels: 2,
            discriminator_max_channels: 4,
            ..cfg()
        };
        let d = Discriminator::<f64>::new_unchecked(&c, &mut rng_from_seed(5));
        let x = crate::data::gaussian_tensor(&mut rng_from_seed(6), &[1, 3, 8, 8], 1.0).cast::<f64>();
        let r = check_gradients(
            "discriminate",
            |g, v| {
                let b = d.params.bind(g);
                d.discriminate(g, &b, v[0])
            },
            &[x],
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}
