//! Acceptance criteria. Each test prints one `ACCEPTANCE <n> PASS|FAIL` line
//! and then asserts it. Every tolerance and run size is pinned below.
//!
//! Criteria 4 to 6 share two desk-scale training runs (gradient decay on and
//! off, otherwise identical) that are trained once per process. They are
//! ignored by default because of their run time.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gensteg::adversaries::pe;
use gensteg::data::{
    load_dataset, load_png, rng_from_seed, save_png, secret_from_rng, write_synthetic_corpus, ImageBatch, ImageSource,
    RunConfig, SecretTensor,
};
use gensteg::extractor::accuracy;
use gensteg::generator::{low_pass, low_pass_kernel, merge_data, Generator, MergePayload, PayloadMode};
use gensteg::harness::{cmd_evaluate, run_gradcheck, GRADCHECK_TOL};
use gensteg::substrate::{Graph, Tensor};
use gensteg::training::{fit, fresh_accuracy, hgd_factor, hgd_scale, Checkpoint, EvalReport, Trainer};

// Criterion 1
const GRADCHECK_BUDGET_SECS: f64 = 120.0;
// Criterion 2
const METRIC_TRIALS: usize = 1000;
const MAX_SET: usize = 64;
const AUC_TOL: f64 = 1e-9;
const HGD_REL_TOL: f64 = 4.0 * f64::EPSILON;
// Criterion 3
const MAX_ROUTING_CHANNELS: usize = 64;
const MAX_PAYLOAD_DEPTH: usize = 8;
const LOW_PASS_TOL: f64 = 1e-12;
// Criterion 4
const DESK_IMAGES: usize = 2000;
const DESK_STEPS: u64 = 600;
const DESK_ACC_PAIRS: usize = 256;
const DESK_MIN_ACC: f64 = 0.90;
// Criterion 5
const HGD_EVAL_PAIRS: usize = 1200;
const MAX_MAE_RATIO: f64 = 0.6;
const MIN_PE_GAIN: f64 = 0.15;
// Criterion 6
const ZERO_PAYLOAD_PAIRS: usize = 1200;
const CHANCE_BAND: (f64, f64) = (0.45, 0.55);
// Criterion 7
const DETERMINISM_STEPS: u64 = 10;

fn report(n: u32, pass: bool, what: &str, detail: String) {
    println!("ACCEPTANCE {n} {} {what}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn desk_cfg() -> RunConfig {
    RunConfig {
        resolution: 32,
        payload_depth: 1,
        latent_dim: 64,
        mapping_layers: 4,
        generator_base_channels: 64,
        generator_min_channels: 16,
        extractor_width: 32,
        extractor_blocks: 2,
        discriminator_base_channels: 16,
        discriminator_max_channels: 64,
        steganalyzer_base_channels: 8,
        steganalyzer_max_channels: 32,
        batch_size: 16,
        checkpoint_every: 100_000,
        eval_every: 100,
        seed: 2024,
        ..RunConfig::default()
    }
}

struct DeskRun {
    checkpoint: PathBuf,
    acc: f64,
    eval: EvalReport,
    seconds: f64,
}

struct Desk {
    _dir: tempfile::TempDir,
    on: DeskRun,
    off: DeskRun,
}

fn desk_run(cfg: &RunConfig, data_dir: &Path, out: &Path) -> DeskRun {
    let start = Instant::now();
    let data = load_dataset(data_dir, cfg).unwrap();
    let mut t = Trainer::new(cfg).unwrap();
    let r = fit(&mut t, &data, DESK_STEPS, out).unwrap();
    let acc = fresh_accuracy(&t.generator, &t.extractor, cfg, DESK_ACC_PAIRS, cfg.seed ^ 0xacc).unwrap();
    let eval = cmd_evaluate(&r.last_checkpoint, HGD_EVAL_PAIRS, 7, false, &out.join("eval")).unwrap();
    DeskRun {
        checkpoint: r.last_checkpoint,
        acc,
        eval,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        write_synthetic_corpus(&data, DESK_IMAGES, 32, 11).unwrap();
        let on_cfg = desk_cfg();
        let off_cfg = RunConfig {
            use_hgd: false,
            ..desk_cfg()
        };
        let on = desk_run(&on_cfg, &data, &dir.path().join("hgd_on"));
        let off = desk_run(&off_cfg, &data, &dir.path().join("hgd_off"));
        Desk { _dir: dir, on, off }
    })
}

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let rows = run_gradcheck(None).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.op.as_str()).collect();
    let pass = failed.is_empty() && worst <= GRADCHECK_TOL && secs <= GRADCHECK_BUDGET_SECS && rows.len() >= 6;
    report(
        1,
        pass,
        "gradient suite",
        format!("{} ops, worst rel err {worst:.2e} (tol {GRADCHECK_TOL:e}), {secs:.1}s, failed {failed:?}", rows.len()),
    );
    assert!(pass);
}

/// Error of the best threshold found by trying every cut between sorted
/// distinct scores, counted directly.
fn pe_oracle(c: &[f64], s: &[f64]) -> f64 {
    let mut cuts: Vec<f64> = c.iter().chain(s).copied().collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut ts = vec![f64::NEG_INFINITY, f64::INFINITY];
    ts.extend(cuts);
    let mut best = f64::INFINITY;
    for t in ts {
        let fa = c.iter().filter(|&&x| x >= t).count() as f64 / c.len() as f64;
        let md = s.iter().filter(|&&x| x < t).count() as f64 / s.len() as f64;
        best = best.min(0.5 * (fa + md));
    }
    best
}

fn auc_oracle(c: &[f64], s: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &x in s {
        for &y in c {
            wins += if x > y {
                1.0
            } else if x == y {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (c.len() * s.len()) as f64
}

#[test]
fn criterion_2_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut pe_bad, mut auc_worst) = (0, 0.0f64);
    for trial in 0..METRIC_TRIALS {
        let (nc, ns) = (rng.random_range(1..=MAX_SET), rng.random_range(1..=MAX_SET));
        // half the trials use a coarse grid so that ties occur
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            if trial % 2 == 0 {
                rng.random_range(0..8) as f64 / 8.0
            } else {
                rng.random()
            }
        };
        let c: Vec<f64> = (0..nc).map(|_| draw(&mut rng)).collect();
        let s: Vec<f64> = (0..ns).map(|_| draw(&mut rng)).collect();
        let r = pe(&c, &s).unwrap();
        if r.pe != pe_oracle(&c, &s) {
            pe_bad += 1;
        }
        if trial % 2 == 1 {
            auc_worst = auc_worst.max((r.auc - auc_oracle(&c, &s)).abs());
        }
    }

    let mut acc_bad = 0;
    for i in 0..200 {
        let (b, h) = (1 + i % 4, 4 + i % 5);
        let a = secret_from_rng(&mut rng, b, h, h);
        let d = secret_from_rng(&mut rng, b, h, h);
        let same = a.bits().iter().zip(d.bits()).filter(|(x, y)| x == y).count();
        if accuracy(&a, &d).unwrap() != same as f64 / a.len() as f64 {
            acc_bad += 1;
        }
    }

    let mut hgd_worst = 0.0f64;
    let cases = [(128, 128, 128, 128, 1.0), (64, 64, 128, 128, 10.0), (4, 8, 128, 128, 10f64.powf(4.5))];
    for (h, w, hh, ww, divisor) in cases {
        let got = hgd_factor(h, w, hh, ww, 10.0);
        hgd_worst = hgd_worst.max((got * divisor - 1.0).abs());
        let g = Tensor::new(vec![3], vec![1.0f64, -2.5, 7.0]).unwrap();
        let scaled = hgd_scale(&g, h, w, hh, ww, 10.0);
        for (x, y) in g.data().iter().zip(scaled.data()) {
            hgd_worst = hgd_worst.max((y * divisor / x - 1.0).abs());
        }
    }
    for k in 0..6 {
        let h = 4usize << k;
        let expected = 10f64.powf(-(0.5 * (128.0f64 * 128.0).log2() - 0.5 * ((h * h) as f64).log2()));
        hgd_worst = hgd_worst.max((hgd_factor(h, h, 128, 128, 10.0) / expected - 1.0).abs());
    }

    let pass = pe_bad == 0 && auc_worst <= AUC_TOL && acc_bad == 0 && hgd_worst <= HGD_REL_TOL;
    report(
        2,
        pass,
        "metric oracles",
        format!(
            "pe mismatches {pe_bad}/{METRIC_TRIALS}, auc max err {auc_worst:.1e} (tol {AUC_TOL:e}), accuracy mismatches {acc_bad}/200, hgd max rel err {hgd_worst:.1e}"
        ),
    );
    assert!(pass);
}

fn merge_routing_ok(n_ch: usize, b: usize) -> bool {
    let mut g = Graph::<f64>::new();
    let f = g.leaf(Tensor::zeros(&[1, n_ch, 2, 2]));
    let p = g.leaf(Tensor::from_fn(&[1, b, 2, 2], |i| (i / 4 + 1) as f64));
    let k = g.leaf(Tensor::new(vec![1], vec![1.0]).unwrap());
    let y = merge_data(&mut g, f, p, k).unwrap();
    let out = g.value(y).clone();
    (0..n_ch).all(|c| out.data()[c * 4..c * 4 + 4].iter().all(|&v| v == (c % b + 1) as f64))
}

#[test]
fn criterion_3_structural_invariants() {
    let mut routing_bad = Vec::new();
    for n_ch in 1..=MAX_ROUTING_CHANNELS {
        for b in 1..=MAX_PAYLOAD_DEPTH.min(n_ch) {
            if !merge_routing_ok(n_ch, b) {
                routing_bad.push((n_ch, b));
            }
        }
    }

    let k = low_pass_kernel::<f64>();
    let kernel_sum: f64 = k.data().iter().sum();
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::full(&[1, 3, 8, 8], 0.37));
    let y = low_pass(&mut g, x).unwrap();
    let const_err = g.value(y).data().iter().map(|v| (v - 0.37).abs()).fold(0.0, f64::max);

    let cfg = RunConfig {
        resolution: 16,
        latent_dim: 8,
        mapping_layers: 2,
        generator_base_channels: 8,
        generator_min_channels: 4,
        payload_depth: 3,
        ..RunConfig::default()
    };
    let gen = Generator::<f32>::new(&cfg, &mut rng_from_seed(3)).unwrap();
    let z = gensteg::data::gaussian_tensor(&mut rng_from_seed(4), &[2, 8], 1.0);
    let noise: Vec<Tensor<f32>> = gen.noise_shapes(2).iter().map(|s| Tensor::zeros(s)).collect();
    let cover = MergePayload {
        mode: PayloadMode::Cover,
        tensor: Tensor::zeros(&[2, 1, 16, 16]),
    };
    let stego = MergePayload {
        mode: PayloadMode::Stego,
        tensor: SecretTensor::stack::<f32>(&[SecretTensor::zeros(3, 16, 16), SecretTensor::zeros(3, 16, 16)]).unwrap(),
    };
    let modes_equal = gen.generate(&z, &cover, &noise).unwrap().pixels == gen.generate(&z, &stego, &noise).unwrap().pixels;

    let dir = tempfile::tempdir().unwrap();
    let img = ImageBatch::new(
        Tensor::from_fn(&[1, 3, 16, 16], |i| ((i * 7919) % 1000) as f32 / 500.0 - 1.0),
        ImageSource::Cover,
    )
    .unwrap();
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    save_png(&img, &a).unwrap();
    save_png(&load_png(&a).unwrap(), &b).unwrap();
    let png_idempotent = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();

    let pass = routing_bad.is_empty()
        && kernel_sum == 1.0
        && const_err <= LOW_PASS_TOL
        && modes_equal
        && png_idempotent;
    report(
        3,
        pass,
        "structural invariants",
        format!(
            "routing failures {routing_bad:?}, kernel sum {kernel_sum}, constant error {const_err:.1e}, cover/stego zero equal {modes_equal}, png idempotent {png_idempotent}"
        ),
    );
    assert!(pass);
}

#[test]
#[ignore = "desk-scale training, about 15 minutes; run with --include-ignored"]
fn criterion_4_desk_run_extraction() {
    let d = desk();
    let pass = d.on.acc >= DESK_MIN_ACC;
    report(
        4,
        pass,
        "desk run extraction",
        format!(
            "Acc {:.4} over {DESK_ACC_PAIRS} fresh pairs after {DESK_STEPS} steps (need >= {DESK_MIN_ACC}), 32x32, B=1, {DESK_IMAGES} images, batch 16, {:.0}s",
            d.on.acc, d.on.seconds
        ),
    );
    assert!(pass);
}

#[test]
#[ignore = "desk-scale training, about 15 minutes; run with --include-ignored"]
fn criterion_5_gradient_decay_effect() {
    let d = desk();
    let (on, off) = (&d.on.eval, &d.off.eval);
    let ratio = on.mae / off.mae;
    let gain = on.detection.pe - off.detection.pe;
    let pass = ratio <= MAX_MAE_RATIO && gain >= MIN_PE_GAIN;
    report(
        5,
        pass,
        "gradient decay effect",
        format!(
            "MAE on {:.3} off {:.3} ratio {ratio:.3} (need <= {MAX_MAE_RATIO}); Pe on {:.3} off {:.3} gain {gain:.3} (need >= {MIN_PE_GAIN}); {}/{} pairs; Acc on {:.3} off {:.3}",
            on.mae, off.mae, on.detection.pe, off.detection.pe, on.n_train, on.n_test, d.on.acc, d.off.acc
        ),
    );
    assert!(pass);
}

#[test]
#[ignore = "desk-scale training, about 15 minutes; run with --include-ignored"]
fn criterion_6_zero_payload_control() {
    let d = desk();
    let dir = tempfile::tempdir().unwrap();
    let r = cmd_evaluate(&d.on.checkpoint, ZERO_PAYLOAD_PAIRS, 9, true, dir.path()).unwrap();
    let inside = |v: f64| (CHANCE_BAND.0..=CHANCE_BAND.1).contains(&v);
    let pass = inside(r.detection.pe) && inside(r.detection.auc);
    report(
        6,
        pass,
        "zero-payload control",
        format!(
            "Pe {:.3}, AUC {:.3} (need both in [{}, {}]), MAE {:.3}",
            r.detection.pe, r.detection.auc, CHANCE_BAND.0, CHANCE_BAND.1, r.mae
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_determinism_and_resume() {
    let cfg = desk_cfg();
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    write_synthetic_corpus(&data_dir, 64, 32, 5).unwrap();
    let data = load_dataset(&data_dir, &cfg).unwrap();

    let run = |name: &str| {
        let mut t = Trainer::new(&cfg).unwrap();
        fit(&mut t, &data, DETERMINISM_STEPS, &dir.path().join(name)).unwrap();
        t
    };
    let a = run("a");
    let b = run("b");
    let bitwise = a.state.history.len() == DETERMINISM_STEPS as usize
        && a.state
            .history
            .iter()
            .zip(&b.state.history)
            .all(|(x, y)| format!("{x:?}") == format!("{y:?}") && x.loss_g.to_bits() == y.loss_g.to_bits());

    let mut first = Trainer::new(&cfg).unwrap();
    let half = fit(&mut first, &data, DETERMINISM_STEPS / 2, &dir.path().join("c")).unwrap();
    let mut resumed = Trainer::from_checkpoint(&Checkpoint::read(&half.last_checkpoint).unwrap()).unwrap();
    fit(&mut resumed, &data, DETERMINISM_STEPS - DETERMINISM_STEPS / 2, &dir.path().join("c")).unwrap();
    let resume_equal = resumed.state == a.state
        && resumed.generator.params == a.generator.params
        && resumed.discriminator.params == a.discriminator.params
        && resumed.steganalyzer.params == a.steganalyzer.params
        && resumed.extractor.params == a.extractor.params
        && resumed.opt_g == a.opt_g
        && resumed.opt_e == a.opt_e;

    let pass = bitwise && resume_equal;
    report(
        7,
        pass,
        "determinism and resume",
        format!("first {DETERMINISM_STEPS} steps bitwise equal {bitwise}, resume at step {} equal {resume_equal}", DETERMINISM_STEPS / 2),
    );
    assert!(pass);
}
