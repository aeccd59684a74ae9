//! Checkpoint file: `SOODCKPT` magic, `u32` LE format version, `u32` LE header
//! length, a JSON header, then little-endian `f64` blocks in the order listed
//! in the header (`params.*`, `adam_m.*`, `adam_v.*`, each as adapter, b0, b2).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::hierarchy::ModelParams;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"SOODCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const BLOCK_NAMES: [&str; 9] = [
    "params.adapter",
    "params.bias_global",
    "params.bias_high",
    "adam_m.adapter",
    "adam_m.bias_global",
    "adam_m.bias_high",
    "adam_v.adapter",
    "adam_v.bias_global",
    "adam_v.bias_high",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub optimizer: AdamState<T>,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    d: usize,
    num_classes: usize,
    epoch: usize,
    step: usize,
    adam_t: u64,
    config: TrainConfig,
    blocks: Vec<String>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            d: self.params.dim(),
            num_classes: self.params.num_classes(),
            epoch: self.epoch,
            step: self.step,
            adam_t: self.optimizer.t,
            config: self.config.clone(),
            blocks: BLOCK_NAMES.iter().map(|s| s.to_string()).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 3 * self.params.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in [&self.params, &self.optimizer.m, &self.optimizer.v] {
            for block in p.blocks() {
                for &x in block {
                    out.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(fmt(&format!("unsupported version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body_start = 16 + header_len;
        if bytes.len() < body_start {
            return Err(Error::Truncated("checkpoint header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[16..body_start])
            .map_err(|e| fmt(&e.to_string()))?;
        let (d, c) = (header.d, header.num_classes);
        let per = d * d + 2 * d * c;
        let expected = body_start + 3 * per * 8;
        if bytes.len() < expected {
            return Err(Error::Truncated(format!(
                "checkpoint has {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        if bytes.len() > expected {
            return Err(fmt("trailing bytes"));
        }
        let mut values = bytes[body_start..]
            .chunks_exact(8)
            .map(|b| T::lit(f64::from_le_bytes(b.try_into().unwrap())));
        let mut read = || {
            let mut p = ModelParams::zeros(d, c);
            for block in p.blocks_mut() {
                for x in block.iter_mut() {
                    *x = values.next().expect("length checked");
                }
            }
            p
        };
        let params = read();
        let m = read();
        let v = read();
        Ok(Self {
            params,
            optimizer: AdamState {
                m,
                v,
                t: header.adam_t,
            },
            config: header.config,
            epoch: header.epoch,
            step: header.step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
