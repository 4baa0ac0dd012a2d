//! Versioned binary container for named parameter tensors plus JSON metadata.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "GCBCKPT\0" | u32 format version | u32 kind | u64 header length | header JSON | f64 data
//! ```
//!
//! The header lists tensor names and shapes in storage order, the caller's metadata, and the
//! SHA-256 of the data section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autograd::ParamStore;
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 8] = b"GCBCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckpointKind {
    Codec,
    Generator,
}

impl CheckpointKind {
    fn code(self) -> u32 {
        match self {
            CheckpointKind::Codec => 1,
            CheckpointKind::Generator => 2,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        match c {
            1 => Some(CheckpointKind::Codec),
            2 => Some(CheckpointKind::Generator),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint format version {0} is not supported (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("unknown checkpoint kind {0}")]
    UnknownKind(u32),
    #[error("expected a {expected:?} checkpoint, found {found:?}")]
    KindMismatch {
        expected: CheckpointKind,
        found: CheckpointKind,
    },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("{0} trailing bytes after tensor data")]
    TrailingBytes(usize),
    #[error("bad checkpoint header: {0}")]
    BadHeader(String),
    #[error("tensor data checksum mismatch")]
    ChecksumMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub meta: serde_json::Value,
    pub params: ParamStore,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8], CheckpointError> {
    if bytes.len() < n {
        return Err(CheckpointError::Truncated);
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut data = Vec::with_capacity(self.params.num_scalars() * 8);
        for m in self.params.values() {
            for v in m.data() {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            meta: self.meta.clone(),
            tensors: self
                .params
                .names()
                .iter()
                .zip(self.params.values())
                .map(|(n, m)| TensorEntry {
                    name: n.clone(),
                    rows: m.rows(),
                    cols: m.cols(),
                })
                .collect(),
            sha256: hex(&Sha256::digest(&data)),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.kind.code().to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&data);
        out
    }

    /// Parses a container. Never panics on malformed input.
    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut rest = bytes;
        if take(&mut rest, 8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(take(&mut rest, 4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let code = u32::from_le_bytes(take(&mut rest, 4)?.try_into().expect("4 bytes"));
        let kind = CheckpointKind::from_code(code).ok_or(CheckpointError::UnknownKind(code))?;
        let header_len = u64::from_le_bytes(take(&mut rest, 8)?.try_into().expect("8 bytes"));
        let header_len = usize::try_from(header_len).map_err(|_| CheckpointError::Truncated)?;
        let header: Header = serde_json::from_slice(take(&mut rest, header_len)?)
            .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;

        let mut total = 0usize;
        for t in &header.tensors {
            let n = t
                .rows
                .checked_mul(t.cols)
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| {
                    CheckpointError::BadHeader(format!("tensor {} too large", t.name))
                })?;
            total = total
                .checked_add(n)
                .ok_or_else(|| CheckpointError::BadHeader("tensor data too large".into()))?;
        }
        if rest.len() < total {
            return Err(CheckpointError::Truncated);
        }
        if rest.len() > total {
            return Err(CheckpointError::TrailingBytes(rest.len() - total));
        }
        if hex(&Sha256::digest(rest)) != header.sha256 {
            return Err(CheckpointError::ChecksumMismatch);
        }
        let mut params = ParamStore::new();
        for t in header.tensors {
            if params.find(&t.name).is_some() {
                return Err(CheckpointError::BadHeader(format!(
                    "duplicate tensor {}",
                    t.name
                )));
            }
            let raw = take(&mut rest, t.rows * t.cols * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.add(t.name, Matrix::from_vec(t.rows, t.cols, data));
        }
        Ok(Self {
            kind,
            meta: header.meta,
            params,
        })
    }

    pub fn expect_kind(self, expected: CheckpointKind) -> Result<Self, CheckpointError> {
        if self.kind != expected {
            return Err(CheckpointError::KindMismatch {
                expected,
                found: self.kind,
            });
        }
        Ok(self)
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        Self::decode(&fs::read(path)?)
    }

    /// Metadata field deserialized into `T`.
    pub fn meta_field<T: serde::de::DeserializeOwned>(
        &self,
        key: &str,
    ) -> Result<T, CheckpointError> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| CheckpointError::BadHeader(format!("missing metadata {key}")))?;
        T::deserialize(v).map_err(|e| CheckpointError::BadHeader(format!("metadata {key}: {e}")))
    }
}
