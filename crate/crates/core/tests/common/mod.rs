#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gensteg::data::{write_synthetic_corpus, RunConfig};

pub fn tiny_cfg() -> RunConfig {
    RunConfig {
        resolution: 16,
        latent_dim: 8,
        mapping_layers: 2,
        generator_base_channels: 8,
        generator_min_channels: 4,
        extractor_width: 4,
        extractor_blocks: 1,
        discriminator_base_channels: 2,
        discriminator_max_channels: 4,
        steganalyzer_base_channels: 2,
        steganalyzer_max_channels: 4,
        batch_size: 2,
        eval_every: 50,
        checkpoint_every: 40,
        steganalyzer_epochs: 1,
        ..RunConfig::default()
    }
}

/// Config file plus a small image corpus in `dir`.
pub fn setup(dir: &Path, cfg: &RunConfig) -> (PathBuf, PathBuf) {
    let cfg_path = dir.join("cfg.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()).unwrap();
    let data = dir.join("data");
    write_synthetic_corpus(&data, 24, cfg.resolution, 1).unwrap();
    (cfg_path, data)
}

pub fn gensteg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gensteg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("running gensteg")
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.lines().last().expect("json line")).unwrap()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
