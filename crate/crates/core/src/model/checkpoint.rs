//! Binary checkpoint: magic, version, TOML header, then named f64 arrays.
//!
//! ```text
//! b"ANCHORLB"  u32 version  u64 header_len  header (TOML)
//! u64 n_arrays
//! per array: u64 name_len, name, u32 rank, u64 dims[rank], f64 values (little endian)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Lsm, ModelConfig, ModelError};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"ANCHORLB";
const VERSION: u32 = 1;
const MAX_NAME: u64 = 4096;

/// Bookkeeping stored beside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// Optimizer steps taken so far.
    pub step: u64,
    pub seed: u64,
    /// Epochs completed.
    #[serde(default)]
    pub epochs: u64,
    /// Half-open range of example ids the model was trained on.
    #[serde(default)]
    pub train_ids: Option<(u64, u64)>,
    #[serde(default)]
    pub recipe: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    meta: CheckpointMeta,
    model: ModelConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub meta: CheckpointMeta,
    /// Model parameters by name, plus any auxiliary state (e.g. optimizer moments).
    pub arrays: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn array(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write(&self, path: &Path) -> Result<(), ModelError> {
        let mut buf = Vec::new();
        self.encode(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path)?;
        Self::decode(&mut bytes.as_slice())
    }

    pub fn encode(&self, w: &mut impl Write) -> Result<(), ModelError> {
        let header = toml::to_string(&Header {
            meta: self.meta.clone(),
            model: self.config.clone(),
        })
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        w.write_all(&(self.arrays.len() as u64).to_le_bytes())?;
        for (name, t) in &self.arrays {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for d in t.shape() {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn decode(r: &mut impl Read) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::Checkpoint(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not an anchorlab checkpoint"));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
        }
        let len = read_u64(r)?;
        if len > 1 << 20 {
            return Err(bad("header too large"));
        }
        let mut header = vec![0u8; len as usize];
        r.read_exact(&mut header)?;
        let header = String::from_utf8(header).map_err(|_| bad("header is not UTF-8"))?;
        let header: Header = toml::from_str(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let count = read_u64(r)?;
        let mut arrays = Vec::new();
        for _ in 0..count {
            let n = read_u64(r)?;
            if n > MAX_NAME {
                return Err(bad("array name too long"));
            }
            let mut name = vec![0u8; n as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| bad("array name is not UTF-8"))?;
            let rank = read_u32(r)?;
            if rank > 8 {
                return Err(bad("array rank too large"));
            }
            let shape = (0..rank)
                .map(|_| read_u64(r).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let size = shape
                .iter()
                .try_fold(1usize, |a, d| a.checked_mul(*d))
                .filter(|s| *s <= 1 << 28)
                .ok_or_else(|| bad("array too large"))?;
            let mut raw = vec![0u8; size * 8];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self {
            config: header.model,
            meta: header.meta,
            arrays,
        })
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

impl Lsm {
    /// Snapshot of every parameter (frozen encoder included).
    pub fn to_checkpoint(&self, meta: CheckpointMeta) -> Checkpoint {
        Checkpoint {
            config: self.config().clone(),
            meta,
            arrays: self
                .params()
                .iter()
                .map(|(_, p)| (p.name.clone(), p.tensor.clone()))
                .collect(),
        }
    }

    /// Rebuilds the architecture from the stored config and loads every parameter.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let mut model = Lsm::new(ckpt.config.clone())?;
        let ids: Vec<_> = model.params().iter().map(|(id, p)| (id, p.name.clone())).collect();
        for (id, name) in ids {
            let t = ckpt
                .array(&name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter {name}")))?;
            if t.shape() != model.params().tensor(id).shape() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    model.params().tensor(id).shape()
                )));
            }
            model.params_mut().set_tensor(id, t.clone());
        }
        Ok(model)
    }
}
