//! Command implementations behind the `gensteg` binary. Each command writes
//! its artifacts under an output directory and returns a serialisable report.

pub mod gradcheck;
pub mod plot;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    derived_rng, gaussian_tensor, load_dataset, load_png, pack_secret_shape, save_png, secret_from_rng,
    write_synthetic_corpus, BitStream, ImageBatch, RunConfig, SecretTensor,
};
use crate::error::{Error, Result};
use crate::extractor::bit_accuracy;
use crate::generator::{Generator, MergePayload, PayloadMode};
use crate::training::{
    evaluate, fit, fresh_accuracy, read_metrics, Checkpoint, EvalReport, MetricRecord, Trainer, METRICS_FILE,
};

pub use gradcheck::{format_table, run_gradcheck, GradCheckRow, GRADCHECK_TOL};

const GENERATE_STREAM: u64 = 0x6e4e;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    NoFilter,
    NoSteganalyzer,
    NoHgd,
}

impl Ablation {
    pub fn apply(self, cfg: &mut RunConfig) {
        match self {
            Ablation::NoFilter => cfg.low_pass = false,
            Ablation::NoSteganalyzer => cfg.use_steganalyzer = false,
            Ablation::NoHgd => cfg.use_hgd = false,
        }
    }
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub step: u64,
    pub checkpoint: PathBuf,
    pub acc: f64,
    pub acc_pairs: usize,
    pub pe: Option<f64>,
    pub auc: Option<f64>,
    pub mae: Option<f64>,
    pub low_pass: bool,
    pub steganalyzer: bool,
    pub hgd: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub steps: u64,
    pub out: PathBuf,
    /// Overrides the config's `dataset`.
    pub data_dir: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    /// Pairs for the closing detection estimate; 0 skips it.
    pub summary_pairs: usize,
    pub acc_pairs: usize,
}

/// Train (or resume), then measure accuracy and detectability of the result.
pub fn cmd_train(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainSummary> {
    let mut trainer = match &opts.resume {
        Some(p) => Trainer::load(p)?,
        None => Trainer::new(cfg)?,
    };
    let cfg = trainer.cfg.clone();
    let dir = opts
        .data_dir
        .clone()
        .or_else(|| cfg.dataset.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::Dataset("no dataset directory given (config key `dataset` or --data)".into()))?;
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("directory {} does not exist", dir.display())));
    }
    let data = load_dataset(&dir, &cfg)?;
    create_dir(&opts.out)?;
    let cfg_path = opts.out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()).map_err(|e| Error::io(&cfg_path, e))?;

    let report = fit(&mut trainer, &data, opts.steps, &opts.out)?;
    plot_losses(&opts.out)?;
    let acc = fresh_accuracy(&trainer.generator, &trainer.extractor, &cfg, opts.acc_pairs, cfg.seed ^ 0xacc)?;
    let det = if opts.summary_pairs > 0 {
        Some(evaluate(
            &trainer.generator,
            None,
            &cfg,
            opts.summary_pairs,
            cfg.seed ^ 0xe7a1,
            false,
        )?)
    } else {
        None
    };
    let summary = TrainSummary {
        step: report.final_step,
        checkpoint: report.last_checkpoint,
        acc,
        acc_pairs: opts.acc_pairs,
        pe: det.as_ref().map(|d| d.detection.pe),
        auc: det.as_ref().map(|d| d.detection.auc),
        mae: det.as_ref().map(|d| d.mae),
        low_pass: cfg.low_pass,
        steganalyzer: cfg.use_steganalyzer,
        hgd: cfg.use_hgd,
    };
    write_jsonl(&opts.out.join("summary.jsonl"), std::slice::from_ref(&summary))?;
    Ok(summary)
}

/// `loss_curves.csv` and `loss_curves.png` from the run's metric log.
pub fn plot_losses(run_dir: &Path) -> Result<()> {
    let steps: Vec<_> = read_metrics(run_dir.join(METRICS_FILE))?
        .into_iter()
        .filter_map(|r| match r {
            MetricRecord::Step(s) => Some(s),
            _ => None,
        })
        .collect();
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    plot::write_csv(
        &run_dir.join("loss_curves.csv"),
        &["step", "loss_g", "loss_d", "loss_s", "loss_e", "acc"],
        steps.iter().map(|s| {
            vec![
                s.step.to_string(),
                s.loss_g.to_string(),
                s.loss_d.to_string(),
                opt(s.loss_s),
                s.loss_e.to_string(),
                s.acc.to_string(),
            ]
        }),
    )?;
    let series = |f: &dyn Fn(&crate::training::StepLosses) -> Option<f64>| -> Vec<(f64, f64)> {
        steps.iter().filter_map(|s| f(s).map(|v| (s.step as f64, v))).collect()
    };
    plot::line_chart(
        &run_dir.join("loss_curves.png"),
        &[
            series(&|s| Some(s.adv_g)),
            series(&|s| Some(s.loss_d)),
            series(&|s| s.loss_s),
            series(&|s| Some(s.loss_e)),
            series(&|s| Some(s.acc)),
        ],
        None,
    )
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub checkpoint: PathBuf,
    pub mode: PayloadMode,
    pub payload: Option<PathBuf>,
    /// Use only the first `bits` bits of the payload file.
    pub bits: Option<usize>,
    /// Defaults to as many images as the payload needs, or 1.
    pub count: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifestRecord {
    Run {
        checkpoint: PathBuf,
        mode: PayloadMode,
        count: usize,
        seed: u64,
        resolution: usize,
        payload_depth: usize,
        capacity_per_image: usize,
        payload_file: Option<PathBuf>,
        payload_sha256: Option<String>,
        payload_bits: usize,
    },
    Image {
        index: usize,
        file: String,
        seed: u64,
        bit_offset: usize,
        bits: usize,
    },
}

/// One image from `(seed, index)`. Stego images carry `bits` zero-padded
/// to capacity, or random bits drawn from the same stream when `None`.
pub fn generate_image(
    gen: &Generator<f32>,
    cfg: &RunConfig,
    mode: PayloadMode,
    bits: Option<&BitStream>,
    seed: u64,
    index: u64,
) -> Result<ImageBatch> {
    let h = cfg.resolution;
    let mut rng = derived_rng(seed, GENERATE_STREAM, index);
    let z = gaussian_tensor(&mut rng, &[1, cfg.latent_dim], 1.0);
    let noise: Vec<_> = gen.noise_shapes(1).iter().map(|s| gaussian_tensor(&mut rng, s, 1.0)).collect();
    let tensor = match (mode, bits) {
        (PayloadMode::Cover, _) => gaussian_tensor(&mut rng, &[1, 1, h, h], cfg.sigma_test),
        (PayloadMode::Stego, Some(b)) => pack_secret_shape(b, cfg.payload_depth, h, h)?.to_tensor(),
        (PayloadMode::Stego, None) => secret_from_rng(&mut rng, cfg.payload_depth, h, h).to_tensor(),
    };
    gen.generate(&z, &MergePayload { mode, tensor }, &noise)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write PNGs and `manifest.jsonl`. With a payload file, image `i` carries
/// bits `[i·C, (i+1)·C)` of the stream, zero-padded at the end.
pub fn cmd_generate(opts: &GenerateOptions) -> Result<Vec<ManifestRecord>> {
    let ckpt = Checkpoint::read(&opts.checkpoint)?;
    let cfg = ckpt.config.clone();
    let (gen, _) = ckpt.inference_models()?;
    let (b, h) = (cfg.payload_depth, cfg.resolution);
    let cap = cfg.capacity();

    let payload = match (&opts.payload, opts.mode) {
        (Some(_), PayloadMode::Cover) => {
            return Err(Error::InvalidArgument("cover mode takes no payload".into()));
        }
        (Some(p), PayloadMode::Stego) => {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            let mut bits = BitStream::from_bytes(&bytes);
            if let Some(n) = opts.bits {
                bits = bits.truncated(n)?;
            }
            Some((bits, sha256_hex(&bytes)))
        }
        (None, _) => None,
    };
    let needed = payload.as_ref().map_or(1, |(bits, _)| bits.len().div_ceil(cap).max(1));
    let count = opts.count.unwrap_or(needed);
    if let Some((bits, _)) = &payload {
        if bits.len() > count * cap {
            return Err(Error::Capacity {
                requested: bits.len(),
                capacity: count * cap,
                depth: b,
                height: h,
                width: h,
            });
        }
    }
    create_dir(&opts.out)?;
    let mut records = vec![ManifestRecord::Run {
        checkpoint: opts.checkpoint.clone(),
        mode: opts.mode,
        count,
        seed: opts.seed,
        resolution: h,
        payload_depth: b,
        capacity_per_image: cap,
        payload_file: opts.payload.clone(),
        payload_sha256: payload.as_ref().map(|p| p.1.clone()),
        payload_bits: payload.as_ref().map_or(0, |p| p.0.len()),
    }];
    for i in 0..count {
        let (chunk, bit_offset) = match &payload {
            Some((bits, _)) => {
                let start = (i * cap).min(bits.len());
                let end = ((i + 1) * cap).min(bits.len());
                (Some(BitStream::new(bits.bits()[start..end].to_vec())?), start)
            }
            None => (None, 0),
        };
        let carried = match (opts.mode, &chunk) {
            (PayloadMode::Cover, _) => 0,
            (PayloadMode::Stego, Some(c)) => c.len(),
            (PayloadMode::Stego, None) => cap,
        };
        let img = generate_image(&gen, &cfg, opts.mode, chunk.as_ref(), opts.seed, i as u64)?;
        let file = format!("{}_{i:05}.png", if opts.mode == PayloadMode::Cover { "cover" } else { "stego" });
        save_png(&img, opts.out.join(&file))?;
        records.push(ManifestRecord::Image {
            index: i,
            file,
            seed: opts.seed,
            bit_offset,
            bits: carried,
        });
    }
    write_jsonl(&opts.out.join("manifest.jsonl"), &records)?;
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractReport {
    pub image: PathBuf,
    pub bits: usize,
    pub output: PathBuf,
    pub acc: Option<f64>,
}

/// Recover `n_bits` (default: full capacity) from one PNG and write them
/// MSB-first to `out`. A ground-truth file yields the bit accuracy.
pub fn cmd_extract(
    checkpoint: &Path,
    image: &Path,
    n_bits: Option<usize>,
    truth: Option<&Path>,
    out: &Path,
) -> Result<ExtractReport> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let cfg = &ckpt.config;
    let n = n_bits.unwrap_or(cfg.capacity());
    if n > cfg.capacity() {
        return Err(Error::Capacity {
            requested: n,
            capacity: cfg.capacity(),
            depth: cfg.payload_depth,
            height: cfg.resolution,
            width: cfg.resolution,
        });
    }
    let img = load_png(image)?;
    if img.height() != cfg.resolution || img.width() != cfg.resolution {
        return Err(Error::Image {
            path: image.to_path_buf(),
            reason: format!(
                "image is {}x{}, the model expects {}x{}",
                img.width(),
                img.height(),
                cfg.resolution,
                cfg.resolution
            ),
        });
    }
    let (_, ext) = ckpt.inference_models()?;
    let bits = ext.extract_bits(&img, n)?.remove(0);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    std::fs::write(out, bits.to_bytes()).map_err(|e| Error::io(out, e))?;
    let acc = match truth {
        Some(t) => {
            let bytes = std::fs::read(t).map_err(|e| Error::io(t, e))?;
            let truth = BitStream::from_bytes(&bytes).truncated(n)?;
            Some(bit_accuracy(truth.bits(), bits.bits()))
        }
        None => None,
    };
    Ok(ExtractReport {
        image: image.to_path_buf(),
        bits: n,
        output: out.to_path_buf(),
        acc,
    })
}

/// Detectability report plus `roc.csv` and `roc.png`.
pub fn cmd_evaluate(checkpoint: &Path, n_pairs: usize, seed: u64, zero_payload: bool, out: &Path) -> Result<EvalReport> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let (gen, ext) = ckpt.inference_models()?;
    let report = evaluate(&gen, Some(&ext), &ckpt.config, n_pairs, seed, zero_payload)?;
    write_eval_artifacts(&report, out)?;
    Ok(report)
}

pub fn write_eval_artifacts(report: &EvalReport, out: &Path) -> Result<()> {
    create_dir(out)?;
    write_jsonl(&out.join("evaluation.jsonl"), std::slice::from_ref(report))?;
    let roc = &report.detection.roc;
    plot::write_csv(
        &out.join("roc.csv"),
        &["threshold", "false_alarm", "true_positive"],
        roc.iter()
            .map(|p| vec![p.threshold.to_string(), p.false_alarm.to_string(), p.true_positive.to_string()]),
    )?;
    let pts: Vec<(f64, f64)> = roc.iter().map(|p| (p.false_alarm, p.true_positive)).collect();
    plot::roc_chart(&out.join("roc.png"), &pts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub low_pass: bool,
    pub steganalyzer: bool,
    pub hgd: bool,
    pub acc: f64,
    pub pe: Option<f64>,
    pub auc: Option<f64>,
    pub mae: Option<f64>,
}

/// The four cumulative configurations: plain, then adding the low-pass
/// filter, the steganalyzer and gradient decay in turn.
pub fn ablation_configs(base: &RunConfig) -> Vec<(&'static str, RunConfig)> {
    let stages = [
        ("baseline", false, false, false),
        ("+filter", true, false, false),
        ("+steganalyzer", true, true, false),
        ("+hgd", true, true, true),
    ];
    stages
        .iter()
        .map(|&(name, low_pass, use_steganalyzer, use_hgd)| {
            (
                name,
                RunConfig {
                    low_pass,
                    use_steganalyzer,
                    use_hgd,
                    ..base.clone()
                },
            )
        })
        .collect()
}

pub fn cmd_ablate(base: &RunConfig, opts: &TrainOptions) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (name, cfg) in ablation_configs(base) {
        let sub = TrainOptions {
            out: opts.out.join(name.trim_start_matches('+')),
            resume: None,
            ..opts.clone()
        };
        log::info!("ablation stage {name}");
        let s = cmd_train(&cfg, &sub)?;
        rows.push(AblationRow {
            name: name.to_string(),
            low_pass: s.low_pass,
            steganalyzer: s.steganalyzer,
            hgd: s.hgd,
            acc: s.acc,
            pe: s.pe,
            auc: s.auc,
            mae: s.mae,
        });
    }
    write_jsonl(&opts.out.join("ablation.jsonl"), &rows)?;
    Ok(rows)
}

pub fn format_ablation(rows: &[AblationRow]) -> String {
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let mut s = format!("{:<15} {:>8} {:>8} {:>8} {:>8}\n", "model", "acc", "pe", "auc", "mae");
    for r in rows {
        s.push_str(&format!(
            "{:<15} {:>8.4} {:>8} {:>8} {:>8}\n",
            r.name,
            r.acc,
            f(r.pe),
            f(r.auc),
            f(r.mae)
        ));
    }
    s
}

pub fn cmd_synth_data(out: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    write_synthetic_corpus(out, count, size, seed)
}

/// Print a report as one JSON line.
pub fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let line = serde_json::to_string(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

/// Secret tensors for a random payload, exposed for tests.
pub fn random_secret(cfg: &RunConfig, seed: u64) -> SecretTensor {
    secret_from_rng(&mut derived_rng(seed, GENERATE_STREAM, u64::MAX), cfg.payload_depth, cfg.resolution, cfg.resolution)
}

/// Load one PNG as a batch of one.
pub fn read_image(path: &Path) -> Result<ImageBatch> {
    load_png(path)
}
