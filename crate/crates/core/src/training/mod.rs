//! Losses, regularisers, optimisation and the alternating training loop.

pub mod checkpoint;
pub mod engine;
pub mod eval;
pub mod hgd;
pub mod losses;
pub mod optim;
pub mod run;

pub use checkpoint::Checkpoint;
pub use engine::{LossWeights, StepLosses, StepSample, TrainState, Trainer};
pub use eval::{evaluate, evaluate_split, fresh_accuracy, generate_pairs, EvalReport, PairSet, MIN_EVAL_PAIRS};
pub use hgd::{hgd_factor, hgd_scale};
pub use optim::{Adam, AdamConfig};
pub use run::{fit, read_metrics, FitReport, MetricRecord, METRICS_FILE};
