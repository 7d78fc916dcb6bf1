//! Single-file checkpoint container.
//!
//! Layout: 4-byte magic `DRCP`, little-endian `u32` format version,
//! little-endian `u64` header length, a JSON header, then the payload —
//! every tensor's data as little-endian f64, at the byte offsets the header
//! manifest declares (relative to the payload start). Tensors keep their
//! insertion order, so save → load → save reproduces the file byte for byte.

use std::io::{Read, Write};
use std::path::Path;

use draper_core::error::{Error, Result};
use draper_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::model::ModelSpec;
use crate::Scalar;

pub const MAGIC: [u8; 4] = *b"DRCP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the payload section.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    /// FNV-1a hash (hex) of the training config that produced this file.
    config_hash: String,
    /// Optimizer steps completed.
    step: u64,
    /// Optimizer internal step counter (bias correction state).
    adam_step: u64,
    spec: ModelSpec,
    tensors: Vec<TensorEntry>,
}

/// An in-memory checkpoint: model description plus named tensors in a fixed
/// order (parameters first, then optimizer moments, by convention
/// `opt.m.<param>` / `opt.v.<param>`).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub config_hash: u64,
    pub step: u64,
    pub adam_step: u64,
    pub tensors: Vec<(String, Tensor<Scalar>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor<Scalar>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f64".into(),
                offset,
            });
            offset += (t.len() * 8) as u64;
        }
        let header = Header {
            version: FORMAT_VERSION,
            config_hash: format!("{:016x}", self.config_hash),
            step: self.step,
            adam_step: self.adam_step,
            spec: self.spec.clone(),
            tensors: entries,
        };
        let header_json = serde_json::to_vec(&header)?;

        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&MAGIC)?;
        f.write_all(&FORMAT_VERSION.to_le_bytes())?;
        f.write_all(&(header_json.len() as u64).to_le_bytes())?;
        f.write_all(&header_json)?;
        for (_, t) in &self.tensors {
            for v in t.data() {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(Error::Contract(format!(
                "{} is not a checkpoint (bad magic)",
                path.display()
            )));
        }
        let mut u32buf = [0u8; 4];
        f.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != FORMAT_VERSION {
            return Err(Error::Contract(format!(
                "checkpoint format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let mut u64buf = [0u8; 8];
        f.read_exact(&mut u64buf)?;
        let header_len = u64::from_le_bytes(u64buf) as usize;
        let mut header_json = vec![0u8; header_len];
        f.read_exact(&mut header_json)?;
        let header: Header = serde_json::from_slice(&header_json)?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Contract("header/container version mismatch".into()));
        }
        let config_hash = u64::from_str_radix(&header.config_hash, 16)
            .map_err(|e| Error::Contract(format!("bad config hash in header: {e}")))?;

        let mut payload = Vec::new();
        f.read_to_end(&mut payload)?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            if e.dtype != "f64" {
                return Err(Error::Contract(format!(
                    "tensor `{}` has unsupported dtype `{}`",
                    e.name, e.dtype
                )));
            }
            let len: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + len * 8;
            if end > payload.len() {
                return Err(Error::Contract(format!(
                    "tensor `{}` extends past the payload ({} > {})",
                    e.name,
                    end,
                    payload.len()
                )));
            }
            let data: Vec<Scalar> = payload[start..end]
                .chunks_exact(8)
                .map(|c| Scalar::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((e.name.clone(), Tensor::from_vec(e.shape.clone(), data)));
        }
        Ok(Checkpoint {
            spec: header.spec,
            config_hash,
            step: header.step,
            adam_step: header.adam_step,
            tensors,
        })
    }
}
