//! Binary checkpoint format:
//!
//! ```text
//! "UVAP" | u32 version=1 | u32 tensor_count
//! per tensor: u16 name_len | name (UTF-8) | u8 rank | u32 dims[rank] | f32 data (LE)
//! u32 metadata_len | metadata JSON
//! ```
//! All integers are little-endian. Nothing may follow the metadata block.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig};
use super::schedule::{build_schedule, NoiseSchedule};
use super::text::TokenTable;
use crate::error::{Error, IoContext, Result};
use crate::nn::{ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"UVAP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleParams {
    pub t_train: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            t_train: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub step_count: u64,
    pub vocabulary: Vec<String>,
    pub placeholders: Vec<String>,
    pub model: ModelConfig,
    pub schedule: ScheduleParams,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub schedule: NoiseSchedule,
    pub config_hash: String,
    pub step_count: u64,
}

impl Checkpoint {
    pub fn meta(&self) -> CheckpointMeta {
        let vocab = &self.model.vocab;
        CheckpointMeta {
            config_hash: self.config_hash.clone(),
            step_count: self.step_count,
            vocabulary: vocab.tokens.clone(),
            placeholders: vocab
                .tokens
                .iter()
                .zip(&vocab.placeholder)
                .filter(|(_, &p)| p)
                .map(|(t, _)| t.clone())
                .collect(),
            model: self.model.config.clone(),
            schedule: ScheduleParams {
                t_train: self.schedule.t_train,
                beta_start: self.schedule.beta_start,
                beta_end: self.schedule.beta_end,
            },
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = &self.model.params;
        if let Err(name) = params.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
        for (name, t) in params.names.iter().zip(&params.tensors) {
            let nb = name.as_bytes();
            let len = u16::try_from(nb.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(nb);
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let meta = serde_json::to_vec(&self.meta())?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut params = ParamSet::<f32>::default();
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Integrity("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.push(name, Tensor { shape, data });
        }
        if let Err(name) = params.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let mlen = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(mlen)?)
            .map_err(|e| Error::Integrity(format!("metadata: {e}")))?;
        if r.pos != bytes.len() {
            return Err(Error::Integrity(format!(
                "{} trailing bytes after metadata",
                bytes.len() - r.pos
            )));
        }
        let vocab = TokenTable {
            placeholder: meta
                .vocabulary
                .iter()
                .map(|t| meta.placeholders.contains(t))
                .collect(),
            tokens: meta.vocabulary.clone(),
        };
        let model = Model::from_params(meta.model.clone(), vocab, params)?;
        let schedule = build_schedule(meta.schedule.t_train, meta.schedule.beta_start, meta.schedule.beta_end)?;
        Ok(Self {
            model,
            schedule,
            config_hash: meta.config_hash,
            step_count: meta.step_count,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Integrity(format!(
                "truncated: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    std::fs::write(path, bytes).at(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).at(path)?;
    Checkpoint::from_bytes(&bytes)
}
