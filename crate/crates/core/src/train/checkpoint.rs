//! Binary checkpoint format.
//!
//! ```text
//! "FFCK"                    4 bytes
//! version                   u32 LE
//! config length, config     u32 LE, UTF-8 `key=value` lines sorted by key
//! tensor count              u32 LE
//! per tensor:
//!   name length, name       u32 LE, UTF-8
//!   dtype                   u8 (0 = f32)
//!   rank, dims              u32 LE each
//!   values                  f32 LE, row-major
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FFCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Decoded checkpoint: the config echo and the named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    /// Snapshot of `model`; `extra` entries (training settings and the like)
    /// are echoed alongside the model spec.
    pub fn from_model(model: &Model<f32>, extra: &BTreeMap<String, String>) -> Self {
        let mut config = extra.clone();
        config.extend(model.spec.to_kv());
        Self {
            config,
            tensors: model
                .params()
                .into_iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let config: String = self.config.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        put_bytes(&mut out, config.as_bytes());
        put_u32(&mut out, self.tensors.len());
        for (name, t) in &self.tensors {
            put_bytes(&mut out, name.as_bytes());
            out.push(DTYPE_F32);
            put_u32(&mut out, t.rank());
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                expected: u32::from_be_bytes(CHECKPOINT_MAGIC),
                found: u32::from_be_bytes(magic.try_into().expect("4 bytes")),
            });
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(format!(
                "unsupported checkpoint version {version} (this build reads {CHECKPOINT_VERSION})"
            )));
        }
        let config_len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(config_len)?)
            .map_err(|_| Error::format("checkpoint config is not UTF-8"))?;
        let mut config = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("bad config line `{line}`")))?;
            config.insert(k.to_string(), v.to_string());
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format("tensor name is not UTF-8"))?
                .to_string();
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F32 {
                return Err(Error::format(format!("tensor `{name}`: unknown dtype code {dtype}")));
            }
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(Error::format(format!("tensor `{name}`: rank {rank} too large")));
            }
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::format(format!("tensor `{name}`: dims {dims:?} overflow")))?;
            let values = r
                .take(len)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((name, Tensor::new(dims, values)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::format(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { config, tensors })
    }

    /// Rebuilds the model described by the config echo and loads the tensors.
    pub fn to_model(&self) -> Result<Model<f32>> {
        let spec = ModelSpec::from_kv(&self.config)?;
        let mut model = Model::new(spec, 0)?;
        let params = model.params();
        if params.len() != self.tensors.len() {
            return Err(Error::format(format!(
                "checkpoint has {} tensors, model needs {}",
                self.tensors.len(),
                params.len()
            )));
        }
        for (p, (name, t)) in params.iter().zip(&self.tensors) {
            if &p.name != name || p.value.shape() != t.shape() {
                return Err(Error::format(format!(
                    "tensor `{name}` {:?} does not match parameter `{}` {:?}",
                    t.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
        }
        let values: Vec<Tensor<f32>> = self.tensors.iter().map(|(_, t)| t.clone()).collect();
        model.load_values(&values)?;
        Ok(model)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn save_checkpoint(
    model: &Model<f32>,
    extra: &BTreeMap<String, String>,
    path: &Path,
) -> Result<()> {
    Checkpoint::from_model(model, extra).write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    Checkpoint::read(path)?.to_model()
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("checkpoint field exceeds u32");
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    put_u32(out, bytes.len());
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Truncated {
                needed: self.pos.saturating_add(n),
                found: self.bytes.len(),
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
