//! HEM1 model container.
//!
//! ```text
//! 0..4      magic `HEM1`
//! 4..8      header length L, u32 little-endian
//! 8..8+L    UTF-8 JSON header {kind, meta, blobs: [{name, shape}]}
//! ...       every blob's f64 values, little-endian, in header order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const MODEL_MAGIC: &[u8; 4] = b"HEM1";

/// Named f64 array.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Blob {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self { name: name.into(), shape, data }
    }

    pub fn vector(name: impl Into<String>, data: &[f64]) -> Self {
        Self::new(name, vec![data.len()], data.to_vec())
    }

    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Self {
        Self::new(name, t.shape().to_vec(), t.data().to_vec())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlobInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    blobs: Vec<BlobInfo>,
}

/// Decoded container: model kind, free-form metadata and blobs.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub blobs: Vec<Blob>,
}

impl Checkpoint {
    pub fn blob(&self, name: &str) -> Result<&Blob> {
        self.blobs
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Header(format!("checkpoint has no blob {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        for b in &self.blobs {
            if b.shape.iter().product::<usize>() != b.data.len() {
                return Err(Error::shape(format!("blob {} does not match its shape", b.name)));
            }
        }
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            blobs: self.blobs.iter().map(|b| BlobInfo { name: b.name.clone(), shape: b.shape.clone() }).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Header(e.to_string()))?;
        let len = u32::try_from(json.len()).map_err(|_| Error::DimensionOverflow("checkpoint header".into()))?;
        let total: usize = self.blobs.iter().map(|b| b.data.len()).sum();
        let mut out = Vec::with_capacity(8 + json.len() + 8 * total);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&json);
        for b in &self.blobs {
            for v in &b.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::LengthMismatch { expected: 8, found: bytes.len() as u64 });
        }
        if &bytes[..4] != MODEL_MAGIC {
            return Err(Error::BadMagic {
                expected: "HEM1".into(),
                found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
            });
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        if bytes.len() < 8 + len {
            return Err(Error::LengthMismatch { expected: (8 + len) as u64, found: bytes.len() as u64 });
        }
        let header: Header = serde_json::from_slice(&bytes[8..8 + len]).map_err(|e| Error::Header(e.to_string()))?;
        let mut counts = Vec::with_capacity(header.blobs.len());
        let mut total = 0usize;
        for b in &header.blobs {
            let n = b
                .shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::DimensionOverflow(format!("blob {}", b.name)))?;
            total = total.checked_add(n).ok_or_else(|| Error::DimensionOverflow("checkpoint payload".into()))?;
            counts.push(n);
        }
        let payload = &bytes[8 + len..];
        let expected = total.checked_mul(8).ok_or_else(|| Error::DimensionOverflow("checkpoint payload".into()))?;
        if payload.len() != expected {
            return Err(Error::LengthMismatch { expected: (8 + len + expected) as u64, found: bytes.len() as u64 });
        }
        let mut offset = 0;
        let mut blobs = Vec::with_capacity(header.blobs.len());
        for (info, n) in header.blobs.into_iter().zip(counts) {
            let data = payload[offset..offset + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            offset += 8 * n;
            blobs.push(Blob { name: info.name, shape: info.shape, data });
        }
        Ok(Self { kind: header.kind, meta: header.meta, blobs })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|source| Error::IoAt { path: path.to_path_buf(), source })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| Error::IoAt { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes)
    }
}
