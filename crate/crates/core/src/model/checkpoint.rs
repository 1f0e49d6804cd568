//! Checkpoint files: an 8-byte magic, a little-endian `u64` header length,
//! a JSON header, then every tensor as little-endian `f32` in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, Params};
use crate::corpus::Orientation;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MIRRORLM";
pub const FORMAT_VERSION: u32 = 1;
const ADAM_M: &str = "optimizer.m";
const ADAM_V: &str = "optimizer.v";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: ModelConfig,
    pub tokenizer_id: String,
    pub orientation: Orientation,
    /// Optimizer steps completed.
    pub step: usize,
    /// Epochs completed.
    pub epoch: usize,
    pub tensors: Vec<TensorEntry>,
}

/// First and second AdamW moments, flattened in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerMoments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub tokenizer_id: String,
    pub orientation: Orientation,
    pub step: usize,
    pub epoch: usize,
    pub params: Params<f32>,
    pub moments: Option<OptimizerMoments>,
}

impl Checkpoint {
    pub fn config(&self) -> &ModelConfig {
        self.params.config()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors: Vec<TensorEntry> = self
            .params
            .layout()
            .tensors()
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect();
        if let Some(m) = &self.moments {
            if m.m.len() != self.params.num_params() || m.v.len() != self.params.num_params() {
                return Err(Error::Checkpoint("optimizer moments do not match parameters".into()));
            }
            for name in [ADAM_M, ADAM_V] {
                tensors.push(TensorEntry {
                    name: name.into(),
                    shape: vec![self.params.num_params()],
                });
            }
        }
        let header = CheckpointHeader {
            format_version: FORMAT_VERSION,
            config: self.params.config().clone(),
            tokenizer_id: self.tokenizer_id.clone(),
            orientation: self.orientation,
            step: self.step,
            epoch: self.epoch,
            tensors,
        };
        let header = serde_json::to_vec(&header)?;
        let n_floats = self.params.num_params() * if self.moments.is_some() { 3 } else { 1 };
        let mut out = Vec::with_capacity(16 + header.len() + 4 * n_floats);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let mut put = |xs: &[f32]| {
            for x in xs {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        put(&self.params.data);
        if let Some(m) = &self.moments {
            put(&m.m);
            put(&m.v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_owned());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body_start = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..body_start])?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", header.format_version)));
        }
        header.config.validate()?;
        let expected = super::Layout::new(&header.config);
        let n_params = expected.total();
        let param_tensors = expected.tensors();
        if header.tensors.len() < param_tensors.len() {
            return Err(bad("missing parameter tensors"));
        }
        for (want, got) in param_tensors.iter().zip(&header.tensors) {
            if want.name != got.name || want.shape != got.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match config (expected `{}` {:?})",
                    got.name, got.shape, want.name, want.shape
                )));
            }
        }
        let extra = &header.tensors[param_tensors.len()..];
        let has_moments = match extra {
            [] => false,
            [m, v] if m.name == ADAM_M && v.name == ADAM_V && m.shape == [n_params] && v.shape == [n_params] => true,
            _ => return Err(bad("unexpected extra tensors")),
        };
        let n_floats = n_params * if has_moments { 3 } else { 1 };
        let body = &bytes[body_start..];
        if body.len() != 4 * n_floats {
            return Err(Error::Checkpoint(format!(
                "tensor data holds {} bytes, header declares {}",
                body.len(),
                4 * n_floats
            )));
        }
        let floats: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let params = Params::from_data(&header.config, floats[..n_params].to_vec())?;
        let moments = has_moments.then(|| OptimizerMoments {
            m: floats[n_params..2 * n_params].to_vec(),
            v: floats[2 * n_params..].to_vec(),
        });
        Ok(Checkpoint {
            tokenizer_id: header.tokenizer_id,
            orientation: header.orientation,
            step: header.step,
            epoch: header.epoch,
            params,
            moments,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Short content hash of a file, used to tie results to checkpoints.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
}
