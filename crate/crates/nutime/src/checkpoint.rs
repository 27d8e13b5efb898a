//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "NUTM"  u32 version  u64 meta_len  meta (UTF-8 JSON)
//! u32 n_tensors, then per tensor:
//!     u32 name_len  name  u8 dtype (0 = f32)  u32 rank  u64 dims[rank]  u64 offset  u64 n_bytes
//! u64 payload_len  payload
//! u32 crc32 of every preceding byte
//! ```
//!
//! Offsets are relative to the payload start and must tile it exactly, in
//! directory order.

use std::fs;
use std::path::Path;

use nutime_core::{ModelConfig, ParamStore, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NUTM";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    /// Pretrained encoder without a classification head.
    Encoder,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// Subcommand that wrote the file.
    pub command: String,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub dataset: Option<String>,
    /// Original label of each class index, for classifiers.
    pub labels: Vec<f64>,
    pub writer_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub kind: CheckpointKind,
    /// Configuration of the stored model.
    pub model: ModelConfig,
    /// Resolved configuration of the run that produced it.
    pub run: RunConfig,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Metadata exactly as stored, so a reload writes identical bytes.
    meta_text: String,
    pub tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    /// Parameters are rounded to f32.
    pub fn new<T: Real>(meta: &Metadata, store: &ParamStore<T>) -> Self {
        let tensors = store
            .iter()
            .map(|(_, name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|v| v.f64() as f32).collect(),
            })
            .collect();
        Checkpoint {
            meta_text: serde_json::to_string(meta).expect("metadata serializes"),
            tensors,
        }
    }

    pub fn meta_text(&self) -> &str {
        &self.meta_text
    }

    pub fn metadata(&self) -> Result<Metadata> {
        serde_json::from_str(&self.meta_text).map_err(|e| Error::Checkpoint {
            path: "<metadata>".into(),
            msg: e.to_string(),
        })
    }

    pub fn to_store<T: Real>(&self) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        for t in &self.tensors {
            let values: Vec<f64> = t.data.iter().map(|&v| f64::from(v)).collect();
            store.add(t.name.clone(), Tensor::from_f64(&t.shape, &values)?);
        }
        Ok(store)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload_len: usize = self.tensors.iter().map(|t| t.data.len() * 4).sum();
        let mut out = Vec::with_capacity(payload_len + self.meta_text.len() + 64 * self.tensors.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta_text.len() as u64).to_le_bytes());
        out.extend_from_slice(self.meta_text.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(DTYPE_F32);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            let n = (t.data.len() * 4) as u64;
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&n.to_le_bytes());
            offset += n;
        }
        out.extend_from_slice(&(payload_len as u64).to_le_bytes());
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("bad magic, not a checkpoint file".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("format version {version} is not supported (this build reads version {VERSION})"));
        }
        let meta_len = r.len_u64()?;
        let meta_text = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| "metadata is not UTF-8".to_string())?
            .to_string();
        let n = r.u32()? as usize;
        let mut dir = Vec::new();
        for i in 0..n {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| format!("tensor {i}: name is not UTF-8"))?
                .to_string();
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F32 {
                return Err(format!("tensor {name:?}: unknown dtype {dtype}"));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.len_u64()).collect::<std::result::Result<Vec<_>, _>>()?;
            let offset = r.u64()?;
            let n_bytes = r.u64()?;
            dir.push((name, shape, offset, n_bytes));
        }
        let payload_len = r.u64()?;
        let mut expected = 0u64;
        for (name, shape, offset, n_bytes) in &dir {
            if *offset != expected {
                return Err(format!("tensor {name:?}: offset {offset}, expected {expected} (overlap or gap)"));
            }
            let numel = shape.iter().try_fold(1u64, |a, &d| a.checked_mul(d as u64));
            if numel.and_then(|m| m.checked_mul(4)) != Some(*n_bytes) {
                return Err(format!("tensor {name:?}: {n_bytes} bytes do not match shape {shape:?}"));
            }
            expected = offset
                .checked_add(*n_bytes)
                .filter(|&end| end <= payload_len)
                .ok_or_else(|| format!("tensor {name:?}: extends past the payload ({payload_len} bytes)"))?;
        }
        if expected != payload_len {
            return Err(format!("payload is {payload_len} bytes, tensors cover {expected}"));
        }
        let payload = r.take(usize::try_from(payload_len).map_err(|_| "payload too large".to_string())?)?;
        let body_end = r.pos;
        let stored_crc = r.u32()?;
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        if crc32fast::hash(&bytes[..body_end]) != stored_crc {
            return Err("checksum mismatch".into());
        }
        let tensors = dir
            .into_iter()
            .map(|(name, shape, offset, n_bytes)| {
                let chunk = &payload[offset as usize..(offset + n_bytes) as usize];
                let data = chunk.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
                TensorEntry { name, shape, data }
            })
            .collect();
        Ok(Checkpoint { meta_text, tensors })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::Checkpoint {
            path: path.to_path_buf(),
            msg,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len_u64(&mut self) -> std::result::Result<usize, String> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| format!("length {v} does not fit in memory"))
    }
}
