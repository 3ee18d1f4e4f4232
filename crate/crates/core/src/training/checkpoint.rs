//! Checkpoint file: an 8-byte magic, a little-endian `u64` header length, a
//! JSON header, then every tensor as little-endian `f32` in header order.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::RunConfig;
use crate::error::{Error, Result};
use crate::extractor::Extractor;
use crate::generator::Generator;
use crate::substrate::{ParamSet, Tensor};

use super::engine::{TrainState, Trainer};
use super::optim::Adam;

pub const MAGIC: &[u8; 8] = b"GSNCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    /// TOML, which unlike JSON can hold an infinite decay base.
    config: String,
    state: TrainState,
    optimizer_steps: BTreeMap<String, u64>,
    tensors: Vec<TensorEntry>,
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub state: TrainState,
    pub optimizer_steps: BTreeMap<String, u64>,
    pub tensors: HashMap<String, Tensor<f32>>,
}

const NETWORKS: [&str; 4] = ["generator", "discriminator", "steganalyzer", "extractor"];

impl Trainer {
    fn sections(&self) -> [(&'static str, &ParamSet<f32>, &Adam); 4] {
        [
            (NETWORKS[0], &self.generator.params, &self.opt_g),
            (NETWORKS[1], &self.discriminator.params, &self.opt_d),
            (NETWORKS[2], &self.steganalyzer.params, &self.opt_s),
            (NETWORKS[3], &self.extractor.params, &self.opt_e),
        ]
    }

    /// Write atomically through a sibling temporary file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut entries = Vec::new();
        let mut data: Vec<&Tensor<f32>> = Vec::new();
        let mut optimizer_steps = BTreeMap::new();
        for (net, params, opt) in self.sections() {
            optimizer_steps.insert(net.to_string(), opt.t);
            for (i, (_, name, p)) in params.iter().enumerate() {
                for (prefix, t) in [
                    (format!("{net}/"), &p.value),
                    (format!("adam.m.{net}/"), &opt.m[i]),
                    (format!("adam.v.{net}/"), &opt.v[i]),
                ] {
                    entries.push(TensorEntry {
                        name: format!("{prefix}{name}"),
                        shape: t.shape().to_vec(),
                    });
                    data.push(t);
                }
            }
        }
        let header = Header {
            version: FORMAT_VERSION,
            config: self.cfg.to_toml_string(),
            state: self.state.clone(),
            optimizer_steps,
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut buf = Vec::with_capacity(16 + json.len() + 4 * data.iter().map(|t| t.len()).sum::<usize>());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for t in data {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    /// Rebuild every network and optimizer exactly as saved.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(&ckpt.config)?;
        for (net, params, opt) in [
            (NETWORKS[0], &mut t.generator.params, &mut t.opt_g),
            (NETWORKS[1], &mut t.discriminator.params, &mut t.opt_d),
            (NETWORKS[2], &mut t.steganalyzer.params, &mut t.opt_s),
            (NETWORKS[3], &mut t.extractor.params, &mut t.opt_e),
        ] {
            params.load_values(&ckpt.section(net))?;
            let names: Vec<String> = params.iter().map(|(_, n, _)| n.to_string()).collect();
            for (i, name) in names.iter().enumerate() {
                opt.m[i] = ckpt.tensor(&format!("adam.m.{net}/{name}"))?.clone();
                opt.v[i] = ckpt.tensor(&format!("adam.v.{net}/{name}"))?.clone();
            }
            opt.t = ckpt.optimizer_steps.get(net).copied().unwrap_or(0);
        }
        t.state = ckpt.state.clone();
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

impl Checkpoint {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", header.version)));
        }
        let config = RunConfig::from_toml_str(&header.config)?;
        let mut offset = 16 + len;
        let mut tensors = HashMap::new();
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 4 * n)
                .ok_or_else(|| Error::Checkpoint(format!("truncated data for {}", e.name)))?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            offset += 4 * n;
            tensors.insert(e.name, Tensor::new(e.shape, values)?);
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self {
            config,
            state: header.state,
            optimizer_steps: header.optimizer_steps,
            tensors,
        })
    }

    fn tensor(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    /// Parameters of one network keyed by their own names.
    pub fn section(&self, network: &str) -> HashMap<String, Tensor<f32>> {
        let prefix = format!("{network}/");
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&prefix).map(|n| (n.to_string(), v.clone())))
            .collect()
    }

    /// Only what a sender and receiver need.
    pub fn inference_models(&self) -> Result<(Generator<f32>, Extractor<f32>)> {
        let mut rng = crate::data::rng_from_seed(0);
        let mut g = Generator::new(&self.config, &mut rng)?;
        let mut e = Extractor::new(&self.config, &mut rng)?;
        g.params.load_values(&self.section(NETWORKS[0]))?;
        e.params.load_values(&self.section(NETWORKS[3]))?;
        Ok((g, e))
    }
}
