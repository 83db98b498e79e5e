//! "UVC1" checkpoints.
//!
//! ```text
//! "UVC1" | u32 version | u64 step
//! u32 count | count × (u16 name_len, name, u8 ndim, u32 dims…, f32 data…)   weights
//! u32 count | count × (same)                                               optimizer moments
//! u32 json_len | json                                                      metadata
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::discriminators::DiscriminatorConfig;
use crate::dsp::NormStats;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::nn::NamedParam;

const MAGIC: &[u8; 4] = b"UVC1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A named f32 tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorRecord {
    pub fn from_param(prefix: &str, p: &NamedParam<f32>) -> Self {
        Self {
            name: format!("{prefix}{}", p.name),
            shape: p.tensor.shape().to_vec(),
            data: p.tensor.to_vec(),
        }
    }
}

/// Configuration snapshot stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub train_config: TrainConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub norm_stats: NormStats,
    pub generator_params: usize,
    pub discriminator_params: usize,
    /// Updates applied by the generator and discriminator optimizers.
    pub adam_steps: [u64; 2],
    /// Position of the training RNG stream, as a decimal string.
    pub rng_word_pos: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub tensors: Vec<TensorRecord>,
    pub optimizer: Vec<TensorRecord>,
    pub metadata: CheckpointMetadata,
}

fn put_records(out: &mut Vec<u8>, records: &[TensorRecord]) -> Result<()> {
    out.extend((records.len() as u32).to_le_bytes());
    for r in records {
        let name = r.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::format("checkpoint", format!("name too long: {}", r.name)))?;
        out.extend(name_len.to_le_bytes());
        out.extend(name);
        out.push(r.shape.len() as u8);
        for &d in &r.shape {
            out.extend((d as u32).to_le_bytes());
        }
        for v in &r.data {
            out.extend(v.to_le_bytes());
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::format("checkpoint", format!("truncated at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn records(&mut self) -> Result<Vec<TensorRecord>> {
        let count = self.u32()? as usize;
        let mut out = Vec::new();
        for _ in 0..count {
            let name_len = self.u16()? as usize;
            let name = String::from_utf8(self.take(name_len)?.to_vec())
                .map_err(|_| Error::format("checkpoint", "tensor name is not UTF-8"))?;
            let ndim = self.u8()? as usize;
            let shape = (0..ndim)
                .map(|_| self.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = self.take(n.checked_mul(4).ok_or_else(|| {
                Error::format("checkpoint", format!("tensor {name} is too large"))
            })?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            out.push(TensorRecord { name, shape, data });
        }
        Ok(out)
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        out.extend(self.step.to_le_bytes());
        put_records(&mut out, &self.tensors)?;
        put_records(&mut out, &self.optimizer)?;
        let json = serde_json::to_vec(&self.metadata)
            .map_err(|e| Error::format("checkpoint", e.to_string()))?;
        out.extend((json.len() as u32).to_le_bytes());
        out.extend(json);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::format("checkpoint", "missing UVC1 magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported version {version}"),
            ));
        }
        let step = r.u64()?;
        let tensors = r.records()?;
        let optimizer = r.records()?;
        let json_len = r.u32()? as usize;
        let metadata = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| Error::format("checkpoint", format!("metadata: {e}")))?;
        if r.pos != bytes.len() {
            return Err(Error::format(
                "checkpoint",
                format!("{} trailing bytes", bytes.len() - r.pos),
            ));
        }
        Ok(Self {
            step,
            tensors,
            optimizer,
            metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    fn index(records: &[TensorRecord]) -> HashMap<&str, &TensorRecord> {
        records.iter().map(|r| (r.name.as_str(), r)).collect()
    }

    /// Copies the weights stored under `prefix` into `params`. Every
    /// parameter must be present with a matching shape.
    pub fn assign(&self, prefix: &str, params: &[NamedParam<f32>]) -> Result<()> {
        let index = Self::index(&self.tensors);
        // check everything first so a failure leaves the model untouched
        let mut found = Vec::with_capacity(params.len());
        for p in params {
            let name = format!("{prefix}{}", p.name);
            let rec = index
                .get(name.as_str())
                .ok_or_else(|| Error::format("checkpoint", format!("missing tensor {name}")))?;
            if rec.shape != p.tensor.shape() {
                return Err(Error::format(
                    "checkpoint",
                    format!(
                        "tensor {name} has shape {:?}, model expects {:?}",
                        rec.shape,
                        p.tensor.shape()
                    ),
                ));
            }
            found.push(*rec);
        }
        for (p, rec) in params.iter().zip(found) {
            p.tensor.data_mut().copy_from_slice(&rec.data);
        }
        Ok(())
    }

    /// First and second Adam moments stored for parameter `name`.
    pub fn moments(&self, name: &str) -> Option<(Vec<f32>, Vec<f32>)> {
        let find = |key: String| self.optimizer.iter().find(|r| r.name == key).map(|r| r.data.clone());
        Some((find(format!("m.{name}"))?, find(format!("v.{name}"))?))
    }
}
