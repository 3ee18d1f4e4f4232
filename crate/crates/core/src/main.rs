use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gensteg::data::RunConfig;
use gensteg::generator::PayloadMode;
use gensteg::harness::{self, Ablation, GenerateOptions, TrainOptions};
use gensteg::{Error, Result};

#[derive(Parser)]
#[command(name = "gensteg", version, about = "Train, run and evaluate a generative steganography network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblateArg {
    NoFilter,
    NoSteganalyzer,
    NoHgd,
}

impl From<AblateArg> for Ablation {
    fn from(a: AblateArg) -> Self {
        match a {
            AblateArg::NoFilter => Ablation::NoFilter,
            AblateArg::NoSteganalyzer => Ablation::NoSteganalyzer,
            AblateArg::NoHgd => Ablation::NoHgd,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Cover,
    Stego,
}

#[derive(Args)]
struct RunArgs {
    /// Config file; keys are RunConfig field names. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    steps: u64,
    /// Image directory; overrides the config's `dataset`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Pairs for the closing detection estimate (0 skips it).
    #[arg(long)]
    summary_pairs: Option<usize>,
    /// Fresh pairs for the closing accuracy estimate.
    #[arg(long, default_value_t = 256)]
    acc_pairs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints, metrics and a summary.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        ablate: Vec<AblateArg>,
        /// Continue from a checkpoint; its config is used.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate cover or stego PNGs and a manifest.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "stego")]
        mode: ModeArg,
        /// Bytes to hide, read MSB first. Random bits are drawn when omitted.
        #[arg(long)]
        payload: Option<PathBuf>,
        #[arg(long)]
        bits: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover bits from a stego PNG.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        bits: Option<usize>,
        /// Ground-truth payload for an accuracy figure.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a fresh steganalyzer on generated pairs and report detectability.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1200)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Feed all-zero payloads to both branches.
        #[arg(long)]
        zero_payload: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients of every custom op.
    Gradcheck {
        /// Scale analytic gradients by 1 + FAULT to confirm failures surface.
        #[arg(long)]
        fault: Option<f64>,
    },
    /// Train the four cumulative configurations and tabulate them.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write a procedural image corpus for desk runs.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(run: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &run.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = run.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn train_options(run: &RunArgs, cfg: &RunConfig, resume: Option<PathBuf>) -> TrainOptions {
    TrainOptions {
        steps: run.steps,
        out: run.out.clone(),
        data_dir: run.data.clone(),
        resume,
        summary_pairs: run.summary_pairs.unwrap_or(cfg.eval_pairs),
        acc_pairs: run.acc_pairs,
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { run, ablate, resume } => {
            let mut cfg = load_config(&run)?;
            for a in ablate {
                Ablation::from(a).apply(&mut cfg);
            }
            if resume.is_some() && (run.config.is_some() || run.seed.is_some()) {
                return Err(Error::InvalidArgument("--resume uses the checkpoint's config; drop --config and --seed".into()));
            }
            let opts = train_options(&run, &cfg, resume);
            harness::print_json(&harness::cmd_train(&cfg, &opts)?)?;
        }
        Command::Generate {
            checkpoint,
            mode,
            payload,
            bits,
            count,
            seed,
            out,
        } => {
            let mode = match mode {
                ModeArg::Cover => PayloadMode::Cover,
                ModeArg::Stego => PayloadMode::Stego,
            };
            let records = harness::cmd_generate(&GenerateOptions {
                checkpoint,
                mode,
                payload,
                bits,
                count,
                seed,
                out,
            })?;
            harness::print_json(&records[0])?;
        }
        Command::Extract {
            checkpoint,
            image,
            bits,
            truth,
            out,
        } => {
            let r = harness::cmd_extract(&checkpoint, &image, bits, truth.as_deref(), &out)?;
            harness::print_json(&r)?;
        }
        Command::Evaluate {
            checkpoint,
            pairs,
            seed,
            zero_payload,
            out,
        } => {
            harness::print_json(&harness::cmd_evaluate(&checkpoint, pairs, seed, zero_payload, &out)?)?;
        }
        Command::Gradcheck { fault } => {
            let rows = harness::run_gradcheck(fault)?;
            print!("{}", harness::format_table(&rows));
            return Ok(rows.iter().all(|r| r.passed));
        }
        Command::Ablate { run } => {
            let cfg = load_config(&run)?;
            let rows = harness::cmd_ablate(&cfg, &train_options(&run, &cfg, None))?;
            print!("{}", harness::format_ablation(&rows));
        }
        Command::SynthData { out, count, size, seed } => harness::cmd_synth_data(&out, count, size, seed)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let c = e.category();
            eprintln!("{}", serde_json::json!({ "error": c.name(), "code": c.code(), "message": e.to_string() }));
            ExitCode::from(c.code() as u8)
        }
    }
}
