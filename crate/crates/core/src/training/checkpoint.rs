use std::fmt::Write as _;
use std::path::Path;

use crate::capsnet::{ModelConfig, ModelParams};
use crate::cli::config::{apply_model_key, key_values, model_config_string};
use crate::connectivity::write_atomic;
use crate::error::{CheckpointError, Error, Result};
use crate::numerics::{NamedTensors, Tensor};

use super::fit::TrainHistory;

pub const MAGIC_PREFIX: &[u8; 6] = b"MKCAPS";
pub const FORMAT_VERSION: &[u8; 2] = b"01";

/// Trained parameters together with the configuration that shapes them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub history: TrainHistory,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams, history: TrainHistory) -> Self {
        Self {
            config,
            params,
            history,
        }
    }

    fn config_block(&self) -> String {
        let mut s = model_config_string(&self.config);
        let losses: Vec<String> = self
            .history
            .epoch_losses
            .iter()
            .map(f64::to_string)
            .collect();
        let _ = writeln!(s, "history.epoch_losses = {}", losses.join(","));
        let _ = writeln!(s, "history.stopped_early = {}", self.history.stopped_early);
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let block = self.config_block();
        let tensors = self.params.tensors();
        let mut out = Vec::with_capacity(64 + block.len() + 8 * tensors.numel());
        out.extend_from_slice(MAGIC_PREFIX);
        out.extend_from_slice(FORMAT_VERSION);
        out.extend_from_slice(&(block.len() as u32).to_le_bytes());
        out.extend_from_slice(block.as_bytes());
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors.iter() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if &magic[..6] != MAGIC_PREFIX {
            return Err(CheckpointError::BadMagic.into());
        }
        if &magic[6..] != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: String::from_utf8_lossy(&magic[6..]).into_owned(),
            }
            .into());
        }
        let block_len = r.u32("config block length")? as usize;
        let block = std::str::from_utf8(r.take(block_len, "config block")?)
            .map_err(|_| CheckpointError::BadConfig("config block is not UTF-8".into()))?;
        let (config, history) = parse_config_block(block)?;

        let count = r.u32("tensor count")? as usize;
        let mut tensors = NamedTensors::new();
        for i in 0..count {
            let name_len = r.u16(&format!("tensor {i} name length"))? as usize;
            let name = std::str::from_utf8(r.take(name_len, &format!("tensor {i} name"))?)
                .map_err(|_| CheckpointError::BadConfig(format!("tensor {i} name is not UTF-8")))?
                .to_string();
            let rank = r.u8(&format!("{name} rank"))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64(&format!("{name} extents"))? as usize);
            }
            let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let payload = numel
                .and_then(|n| n.checked_mul(8))
                .filter(|&b| b <= r.remaining())
                .ok_or_else(|| CheckpointError::Truncated {
                    what: format!("{name} data"),
                })?;
            let data: Vec<f64> = r
                .take(payload, &format!("{name} data"))?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(shape.clone(), data).map_err(|_| {
                CheckpointError::ShapeDisagreement {
                    name: name.clone(),
                    expected: Vec::new(),
                    found: shape,
                }
            })?;
            if tensors.get(&name).is_some() {
                return Err(CheckpointError::BadConfig(format!("duplicate tensor {name}")).into());
            }
            tensors.insert(name, t);
        }
        if r.remaining() > 0 {
            return Err(CheckpointError::TrailingBytes(r.remaining()).into());
        }
        let params = ModelParams::from_tensors(&config, tensors)?;
        Ok(Self {
            config,
            params,
            history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Fails with a shape error unless the model accepts `n_rois`-sized input.
    pub fn ensure_input(&self, n_rois: usize) -> Result<()> {
        if self.config.n_rois != n_rois {
            return Err(Error::Shape(format!(
                "input layer: checkpoint expects {0}x{0} matrices, data is {1}x{1}",
                self.config.n_rois, n_rois
            )));
        }
        Ok(())
    }
}

fn parse_config_block(block: &str) -> Result<(ModelConfig, TrainHistory)> {
    let bad = |m: String| Error::Checkpoint(CheckpointError::BadConfig(m));
    let mut config = ModelConfig::default();
    let mut history = TrainHistory::default();
    for (k, v) in key_values(block).map_err(|e| bad(e.to_string()))? {
        match k.as_str() {
            "history.epoch_losses" => {
                history.epoch_losses = v
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|_| bad(format!("bad epoch loss {s:?}")))
                    })
                    .collect::<Result<_>>()?;
            }
            "history.stopped_early" => {
                history.stopped_early = v
                    .parse()
                    .map_err(|_| bad(format!("bad stopped_early {v:?}")))?;
            }
            key => {
                if !apply_model_key(&mut config, key, &v).map_err(|e| bad(e.to_string()))? {
                    return Err(bad(format!("unknown key {key:?}")));
                }
            }
        }
    }
    config.validate().map_err(|e| bad(e.to_string()))?;
    Ok((config, history))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(CheckpointError::Truncated {
                what: what.to_string(),
            }
            .into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }
}
