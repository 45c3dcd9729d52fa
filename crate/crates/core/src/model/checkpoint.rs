use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::NormStats;
use crate::tensor::nn::ParamStore;
use crate::tensor::{Real, Tensor};

use super::{Model, ModelConfig, ModelError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    norm: Option<NormStats>,
}

/// Model parameters in 32-bit form plus the config and feature
/// normalization needed to run them.
///
/// Layout (little-endian): magic `PTCK`, version u32, header length u32,
/// JSON header `{"model", "norm"}`, parameter count u32, then per parameter:
/// name length u32, UTF-8 name, rank u32, dims u32 each, f32 data.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub norm: Option<NormStats>,
    pub params: ParamStore<f32>,
}

fn bad(chunk: &'static str, detail: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        chunk,
        detail: detail.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, chunk: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad(chunk, format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, chunk: &'static str) -> Result<u32> {
        let b = self.take(4, chunk)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

impl Checkpoint {
    pub fn from_model<F: Real>(model: &Model<F>, norm: Option<NormStats>) -> Self {
        Checkpoint {
            config: model.config().clone(),
            norm,
            params: model.params().cast(),
        }
    }

    pub fn to_model<F: Real>(&self) -> Result<Model<F>> {
        Model::from_params(self.config.clone(), self.params.cast())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            model: self.config.clone(),
            norm: self.norm,
        })
        .expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(64 + header.len() + 4 * self.params.total_elements());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (_, name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses and validates every tensor shape against the embedded config.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(bad("magic", "not a PTCK checkpoint"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(bad("version", format!("unsupported version {version}")));
        }
        let len = r.u32("header")? as usize;
        let header: Header = serde_json::from_slice(r.take(len, "header")?)
            .map_err(|e| bad("header", e.to_string()))?;
        let count = r.u32("parameters")? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let n = r.u32("parameter name")? as usize;
            let name = std::str::from_utf8(r.take(n, "parameter name")?)
                .map_err(|e| bad("parameter name", e.to_string()))?
                .to_string();
            if params.id(&name).is_some() {
                return Err(bad("parameter name", format!("duplicate {name}")));
            }
            let rank = r.u32("parameter shape")? as usize;
            if rank > 8 {
                return Err(bad("parameter shape", format!("{name} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("parameter shape")? as usize);
            }
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel.ok_or_else(|| bad("parameter shape", format!("{name} overflows")))?;
            let raw = r.take(numel.saturating_mul(4), "parameter data")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.add(name, Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(bad(
                "trailer",
                format!("{} unexpected bytes", bytes.len() - r.pos),
            ));
        }
        let model: Model<f32> = Model::from_params(header.model, params)?;
        Ok(Checkpoint {
            config: model.config().clone(),
            norm: header.norm,
            params: model.params().clone(),
        })
    }

    /// SHA-256 of the serialized form, lowercase hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    /// Writes the file and returns its hash.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let bytes = self.to_bytes();
        std::fs::write(path, &bytes).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Checkpoint::from_bytes(&bytes)
    }
}
