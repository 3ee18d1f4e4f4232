use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvLossMode {
    /// softplus form: D minimises softplus(-real) + softplus(fake), G softplus(-fake).
    NonSaturating,
    /// log D(x) + log(1 - D(G(z))) as written.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractLossMode {
    /// Binary cross-entropy over both bit values.
    TwoSided,
    /// Only the `d = 1` term.
    OneSided,
}

/// Every knob of a run. Serialised as flat `key = value` lines whose keys are
/// the field names below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub resolution: usize,
    pub payload_depth: usize,
    pub latent_dim: usize,
    pub mapping_layers: usize,
    /// Channels of the learned 4×4 input; halved per upsample.
    pub generator_base_channels: usize,
    pub generator_min_channels: usize,
    pub extractor_width: usize,
    pub extractor_blocks: usize,
    /// Discriminator channels at full resolution, doubled per downsample.
    pub discriminator_base_channels: usize,
    pub discriminator_max_channels: usize,
    pub steganalyzer_base_channels: usize,
    pub steganalyzer_max_channels: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub r1_alpha: f64,
    pub r1_beta: f64,
    pub hgd_delta: f64,
    pub sigma_train: f64,
    pub sigma_test: f64,
    pub extract_noise_std: f64,
    pub merge_init: f64,
    pub leaky_slope: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub lazy_interval: usize,
    pub pl_decay: f64,
    pub adv_loss: AdvLossMode,
    pub extract_loss: ExtractLossMode,
    pub low_pass: bool,
    /// Number of merge stages that run before the low-pass filter (0 = filter first).
    pub filter_after_merges: usize,
    pub use_steganalyzer: bool,
    pub use_hgd: bool,
    pub seed: u64,
    pub dataset: Option<String>,
    pub checkpoint_every: usize,
    pub eval_every: usize,
    pub eval_pairs: usize,
    pub steganalyzer_epochs: usize,
    pub steganalyzer_learning_rate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            payload_depth: 1,
            latent_dim: 128,
            mapping_layers: 8,
            generator_base_channels: 128,
            generator_min_channels: 16,
            extractor_width: 64,
            extractor_blocks: 3,
            discriminator_base_channels: 32,
            discriminator_max_channels: 128,
            steganalyzer_base_channels: 16,
            steganalyzer_max_channels: 64,
            lambda1: 1.0,
            lambda2: 1.0,
            r1_alpha: 1.0,
            r1_beta: 10.0,
            hgd_delta: 10.0,
            sigma_train: 1.0,
            sigma_test: 0.1,
            extract_noise_std: 0.1,
            merge_init: 0.1,
            leaky_slope: 0.2,
            batch_size: 16,
            learning_rate: 2e-3,
            adam_beta1: 0.0,
            adam_beta2: 0.99,
            adam_eps: 1e-8,
            lazy_interval: 4,
            pl_decay: 0.99,
            adv_loss: AdvLossMode::NonSaturating,
            extract_loss: ExtractLossMode::TwoSided,
            low_pass: true,
            filter_after_merges: 0,
            use_steganalyzer: true,
            use_hgd: true,
            seed: 0,
            dataset: None,
            checkpoint_every: 500,
            eval_every: 100,
            eval_pairs: 64,
            steganalyzer_epochs: 12,
            steganalyzer_learning_rate: 1e-3,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !self.resolution.is_power_of_two() || self.resolution < 16 {
            return bad(format!(
                "resolution must be a power of two >= 16, got {}",
                self.resolution
            ));
        }
        if !(1..=8).contains(&self.payload_depth) {
            return bad(format!("payload_depth must be in 1..=8, got {}", self.payload_depth));
        }
        if self.hgd_delta.is_nan() || self.hgd_delta <= 1.0 {
            return bad(format!("hgd_delta must be > 1, got {}", self.hgd_delta));
        }
        for (name, v) in [
            ("sigma_train", self.sigma_train),
            ("sigma_test", self.sigma_test),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("r1_alpha", self.r1_alpha),
            ("r1_beta", self.r1_beta),
            ("learning_rate", self.learning_rate),
            ("steganalyzer_learning_rate", self.steganalyzer_learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.extract_noise_std < 0.0 {
            return bad(format!("extract_noise_std must be >= 0, got {}", self.extract_noise_std));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) || self.leaky_slope == 0.0 {
            return bad(format!("leaky_slope must be in (0, 1), got {}", self.leaky_slope));
        }
        if !(0.0..1.0).contains(&self.pl_decay) {
            return bad(format!("pl_decay must be in [0, 1), got {}", self.pl_decay));
        }
        for (name, v) in [
            ("latent_dim", self.latent_dim),
            ("mapping_layers", self.mapping_layers),
            ("generator_base_channels", self.generator_base_channels),
            ("generator_min_channels", self.generator_min_channels),
            ("extractor_width", self.extractor_width),
            ("extractor_blocks", self.extractor_blocks),
            ("discriminator_base_channels", self.discriminator_base_channels),
            ("steganalyzer_base_channels", self.steganalyzer_base_channels),
            ("batch_size", self.batch_size),
            ("lazy_interval", self.lazy_interval),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if self.filter_after_merges > 4 {
            return bad(format!(
                "filter_after_merges must be in 0..=4, got {}",
                self.filter_after_merges
            ));
        }
        Ok(())
    }

    /// Secret bits carried by one image: B·H·W.
    pub fn capacity(&self) -> usize {
        self.payload_depth * self.resolution * self.resolution
    }

    pub fn effective_hgd_delta(&self) -> Option<f64> {
        self.use_hgd.then_some(self.hgd_delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        assert_eq!(RunConfig::default().capacity(), 1024);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml_str("resolution = 32\nlearnig_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learnig_rate"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.payload_depth = 3;
        cfg.dataset = Some("imgs".into());
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "resolution = 24",
            "payload_depth = 0",
            "payload_depth = 9",
            "hgd_delta = 1.0",
            "sigma_test = 0.0",
        ] {
            assert!(RunConfig::from_toml_str(text).is_err(), "{text}");
        }
    }
}
