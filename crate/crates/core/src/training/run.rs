use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

use super::engine::{StepLosses, Trainer};
use super::eval::fresh_accuracy;

pub const METRICS_FILE: &str = "metrics.jsonl";

/// One line of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricRecord {
    Step(StepLosses),
    Eval { step: u64, acc: f64, pairs: usize },
    Checkpoint { step: u64, path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub steps_run: u64,
    pub final_step: u64,
    pub last_checkpoint: PathBuf,
    pub evals: Vec<(u64, f64)>,
}

pub fn checkpoint_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join(format!("checkpoint_{step:07}.gsn"))
}

/// Seed of the periodic accuracy probe at `step`.
pub fn eval_seed(seed: u64, step: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ step
}

struct Log {
    out: BufWriter<std::fs::File>,
    path: PathBuf,
}

impl Log {
    fn open(path: PathBuf) -> Result<Self> {
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: BufWriter::new(f),
            path,
        })
    }

    fn write(&mut self, rec: &MetricRecord) -> Result<()> {
        let line = serde_json::to_string(rec).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Run `steps` more training steps, appending to `run_dir/metrics.jsonl` and
/// writing periodic checkpoints. Zero steps still writes a checkpoint.
pub fn fit(trainer: &mut Trainer, data: &Dataset, steps: u64, run_dir: &Path) -> Result<FitReport> {
    let cfg = trainer.cfg.clone();
    if data.resolution() != cfg.resolution {
        return Err(Error::Dataset(format!(
            "dataset images are {0}x{0}, the run expects {1}x{1}",
            data.resolution(),
            cfg.resolution
        )));
    }
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut log = Log::open(run_dir.join(METRICS_FILE))?;
    let mut last: Option<PathBuf> = None;
    let mut evals = Vec::new();
    let end = trainer.state.step + steps;

    let save = |t: &Trainer, log: &mut Log| -> Result<PathBuf> {
        let p = checkpoint_path(run_dir, t.state.step);
        t.save(&p)?;
        log.write(&MetricRecord::Checkpoint {
            step: t.state.step,
            path: p.clone(),
        })?;
        log.flush()?;
        Ok(p)
    };

    while trainer.state.step < end {
        let real = data.batch_for_step(trainer.state.step, cfg.batch_size);
        let losses = match trainer.train_step(&real) {
            Ok(l) => l,
            Err(Error::NonFinite { what, location }) => {
                log.flush()?;
                let reference = match &last {
                    Some(p) => format!("last checkpoint {}", Path::display(p)),
                    None => "no checkpoint written yet".to_string(),
                };
                return Err(Error::NonFinite {
                    what,
                    location: Some(format!("{}; {reference}", location.unwrap_or_default())),
                });
            }
            Err(e) => return Err(e),
        };
        log.write(&MetricRecord::Step(losses.clone()))?;
        let done = trainer.state.step;
        if done % 50 == 0 {
            log::info!(
                "step {done}: loss_g {:.4} loss_d {:.4} loss_e {:.4} acc {:.4}",
                losses.loss_g,
                losses.loss_d,
                losses.loss_e,
                losses.acc
            );
        }
        if cfg.eval_every > 0 && done % cfg.eval_every as u64 == 0 {
            let acc = fresh_accuracy(
                &trainer.generator,
                &trainer.extractor,
                &cfg,
                cfg.eval_pairs,
                eval_seed(cfg.seed, done),
            )?;
            log.write(&MetricRecord::Eval {
                step: done,
                acc,
                pairs: cfg.eval_pairs,
            })?;
            evals.push((done, acc));
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every as u64 == 0 {
            last = Some(save(trainer, &mut log)?);
        }
    }
    let fresh = last.as_ref().is_some_and(|p| *p == checkpoint_path(run_dir, trainer.state.step));
    let last = if fresh { last.expect("checked") } else { save(trainer, &mut log)? };
    log.flush()?;
    Ok(FitReport {
        steps_run: steps,
        final_step: trainer.state.step,
        last_checkpoint: last,
        evals,
    })
}

/// Parse a metric log back into records.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::InvalidArgument(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}
