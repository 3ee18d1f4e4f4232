//! Finite-difference verification of every differentiable building block at
//! tiny shapes in double precision.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adversaries::{softmax2, Discriminator, Steganalyzer};
use crate::data::{AdvLossMode, ExtractLossMode, RunConfig};
use crate::error::Result;
use crate::extractor::Extractor;
use crate::generator::{low_pass, merge_data, modulated_conv, rms_normalize, Generator};
use crate::substrate::{check_gradients_with, layers, GradCheckOptions, GradReport, Graph, PadMode, Padding, Tensor, Var};
use crate::training::losses::{
    adv_discriminator_loss, adv_generator_loss, extraction_loss, path_lengths, r1_penalty, steg_generator_loss,
    steganalyzer_loss,
};

pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckRow {
    pub op: String,
    pub max_rel_error: f64,
    pub scalars: usize,
    pub passed: bool,
    pub seconds: f64,
}

fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn tiny_cfg() -> RunConfig {
    RunConfig {
        resolution: 16,
        payload_depth: 1,
        latent_dim: 4,
        mapping_layers: 2,
        generator_base_channels: 8,
        generator_min_channels: 2,
        extractor_width: 2,
        extractor_blocks: 1,
        discriminator_base_channels: 2,
        discriminator_max_channels: 4,
        steganalyzer_base_channels: 2,
        steganalyzer_max_channels: 4,
        ..RunConfig::default()
    }
}

type Case = (&'static str, Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>, Vec<Tensor<f64>>);

fn cases() -> Vec<Case> {
    let cfg = tiny_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut gen = Generator::<f64>::new_unchecked(&cfg, &mut rng).expect("tiny generator");
    // non-zero noise strengths so the noise path is exercised
    let strengths: Vec<_> = gen.arch.blocks.iter().map(|b| b.noise_strength).collect();
    for id in strengths {
        gen.params.get_mut(id).value = Tensor::full(&[1], 0.3);
    }
    let c4 = gen.params.get(gen.arch.constant).value.shape()[1];
    let d8 = Discriminator::<f64>::new_unchecked(&RunConfig { resolution: 8, ..cfg.clone() }, &mut rng);
    let mut e4 = Extractor::<f64>::new(&cfg, &mut rng).expect("tiny extractor");
    e4.arch.resolution = 4;
    let s16 = Steganalyzer::<f64>::new(&cfg, &mut rng).expect("tiny steganalyzer");
    let latent = cfg.latent_dim;

    let g1 = gen.clone();
    let g2 = gen.clone();
    let g3 = gen.clone();
    let g4 = gen.clone();
    let d_r1 = d8.clone();
    let (r1_id, _, p) = d_r1.params.iter().next().expect("discriminator has parameters");
    let r1_weight = p.value.clone();
    let mut v: Vec<Case> = vec![
        (
            "modulated_conv",
            Box::new(|g, v| modulated_conv(g, v[0], v[1], v[2], true, Padding::Same(PadMode::Reflect))),
            vec![rand_t(&[2, 2, 4, 4], 1), rand_t(&[3, 2, 3, 3], 2), rand_t(&[2, 2], 3).map(|x| x + 1.5)],
        ),
        (
            "merge_data",
            Box::new(|g, v| merge_data(g, v[0], v[1], v[2])),
            vec![rand_t(&[2, 3, 4, 4], 4), rand_t(&[2, 2, 4, 4], 5), rand_t(&[1], 6)],
        ),
        ("low_pass", Box::new(|g, v| low_pass(g, v[0])), vec![rand_t(&[1, 2, 6, 6], 7)]),
        ("rms_normalize", Box::new(|g, v| rms_normalize(g, v[0])), vec![rand_t(&[2, 5], 8)]),
        ("upsample2x", Box::new(|g, v| layers::upsample2x(g, v[0])), vec![rand_t(&[1, 2, 3, 3], 9)]),
        ("mean_pool2x", Box::new(|g, v| layers::mean_pool2x(g, v[0])), vec![rand_t(&[1, 2, 4, 4], 10)]),
        (
            "conv2d_reflect",
            Box::new(|g, v| layers::conv2d(g, v[0], v[1], 1, Padding::Same(PadMode::Reflect))),
            vec![rand_t(&[1, 2, 5, 5], 12), rand_t(&[2, 2, 3, 3], 13)],
        ),
        (
            "map_latent",
            Box::new(move |g, v| {
                let b = g1.params.bind(g);
                g1.map_latent(g, &b, v[0])
            }),
            vec![rand_t(&[2, latent], 14)],
        ),
        (
            "general_block",
            Box::new(move |g, v| {
                let b = g2.params.bind(g);
                g2.general_block(g, &b, 0, v[0], v[1], v[2])
            }),
            vec![rand_t(&[1, c4, 4, 4], 15), rand_t(&[1, latent], 16), rand_t(&[1, 1, 4, 4], 17)],
        ),
        (
            "secret_block",
            Box::new(move |g, v| {
                let b = g3.params.bind(g);
                g3.secret_block(g, &b, v[0], v[1], v[2])
            }),
            vec![rand_t(&[1, c4, 4, 4], 18), rand_t(&[1, latent], 19), rand_t(&[1, 1, 16, 16], 20)],
        ),
        (
            "extract_logits",
            Box::new(move |g, v| {
                let b = e4.params.bind(g);
                e4.extract_logits(g, &b, v[0])
            }),
            vec![rand_t(&[1, 3, 4, 4], 21)],
        ),
        (
            "discriminate",
            Box::new(move |g, v| {
                let b = d8.params.bind(g);
                d8.discriminate(g, &b, v[0])
            }),
            vec![rand_t(&[1, 3, 8, 8], 22)],
        ),
        (
            "steganalyze",
            // a half-resolution input upsampled inside keeps the scalar count small
            Box::new(move |g, v| {
                let b = s16.params.bind(g);
                let x = layers::upsample2x(g, v[0])?;
                s16.steganalyze(g, &b, x)
            }),
            vec![rand_t(&[1, 3, 8, 8], 23)],
        ),
        ("softmax2", Box::new(|g, v| softmax2(g, v[0])), vec![rand_t(&[3, 2], 24)]),
        (
            "adv_losses",
            Box::new(|g, v| {
                let a = adv_generator_loss(g, v[1], AdvLossMode::NonSaturating)?;
                let b = adv_generator_loss(g, v[1], AdvLossMode::Literal)?;
                let d = adv_discriminator_loss(g, v[0], v[1])?;
                let s = g.add(a, b)?;
                g.add(s, d)
            }),
            vec![rand_t(&[3, 1], 25), rand_t(&[3, 1], 26)],
        ),
        (
            "steg_generator_loss",
            Box::new(|g, v| {
                let (a, b) = (softmax2(g, v[0])?, softmax2(g, v[1])?);
                steg_generator_loss(g, a, b)
            }),
            vec![rand_t(&[2, 2], 27), rand_t(&[2, 2], 28)],
        ),
        (
            "steganalyzer_loss",
            Box::new(|g, v| {
                let (a, b) = (softmax2(g, v[0])?, softmax2(g, v[1])?);
                steganalyzer_loss(g, a, b)
            }),
            vec![rand_t(&[2, 2], 29), rand_t(&[2, 2], 30)],
        ),
        (
            "extraction_loss",
            Box::new(|g, v| {
                let bits = g.leaf(Tensor::from_fn(&[1, 1, 3, 3], |i| (i % 2) as f64));
                let a = extraction_loss(g, v[0], bits, ExtractLossMode::TwoSided)?;
                let b = extraction_loss(g, v[0], bits, ExtractLossMode::OneSided)?;
                g.add(a, b)
            }),
            vec![rand_t(&[1, 1, 3, 3], 31)],
        ),
        (
            "r1_penalty",
            // D is piecewise linear in its input, so the penalty is checked
            // against the first weight, the direction training uses.
            Box::new(move |g, v| {
                let x = g.leaf(rand_t(&[1, 3, 8, 8], 32));
                let b = d_r1.params.bind(g).with(r1_id, v[0]);
                let out = d_r1.discriminate(g, &b, x)?;
                r1_penalty(g, out, x, 10.0)
            }),
            vec![r1_weight],
        ),
        (
            "path_lengths",
            Box::new(move |g, v| {
                let b = g4.params.bind(g);
                let noise: Vec<Var> = g4
                    .noise_shapes(1)
                    .iter()
                    .enumerate()
                    .map(|(i, s)| g.leaf(rand_t(s, 40 + i as u64)))
                    .collect();
                let payload = g.leaf(rand_t(&[1, 1, 16, 16], 33));
                let img = g4.synthesize(g, &b, v[0], &noise, payload)?;
                path_lengths(g, img, v[0], &rand_t(&[1, 3, 16, 16], 34))
            }),
            vec![rand_t(&[1, latent], 35)],
        ),
    ];
    v.shrink_to_fit();
    v
}

/// Run every case; `fault` perturbs the analytic gradients so the check must
/// fail.
pub fn run_gradcheck(fault: Option<f64>) -> Result<Vec<GradCheckRow>> {
    let opts = GradCheckOptions {
        fault,
        ..GradCheckOptions::default()
    };
    cases()
        .into_iter()
        .map(|(name, op, inputs)| {
            let start = Instant::now();
            let r: GradReport = check_gradients_with(name, op, &inputs, GRADCHECK_TOL, opts)?;
            Ok(GradCheckRow {
                op: r.name,
                max_rel_error: r.max_rel_error,
                scalars: r.scalars,
                passed: r.passed,
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

pub fn format_table(rows: &[GradCheckRow]) -> String {
    let mut s = format!("{:<22} {:>8} {:>12} {:>8}  result\n", "op", "scalars", "max rel err", "seconds");
    for r in rows {
        s.push_str(&format!(
            "{:<22} {:>8} {:>12.3e} {:>8.2}  {}\n",
            r.op,
            r.scalars,
            r.max_rel_error,
            r.seconds,
            if r.passed { "pass" } else { "FAIL" }
        ));
    }
    s
}
