//! Single-file checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GENE" | version: u32 | header_len: u64 | header (UTF-8 JSON) | payload
//! ```
//!
//! The header holds the model configuration, a manifest of named tensors
//! (`name`, `shape`, byte `offset` into the payload), the payload length and
//! its CRC32. The payload is every tensor's `f64` values in manifest order,
//! little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GeneError, Result};
use crate::numcore::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"GENE";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: serde_json::Value,
    tensors: Vec<ManifestEntry>,
    payload_bytes: u64,
    crc32: u32,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut manifest = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            if !t.is_finite() {
                return Err(GeneError::numeric(format!("tensor {name} has non-finite values")));
            }
            manifest.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: payload.len() as u64,
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            config: self.config.clone(),
            tensors: manifest,
            payload_bytes: payload.len() as u64,
            crc32: crc32fast::hash(&payload),
        };
        let header = serde_json::to_vec(&header).map_err(|e| GeneError::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| GeneError::Checkpoint(m.to_string());
        if bytes.len() < 16 {
            return Err(bad("file truncated before header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic (not a checkpoint file)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(GeneError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("file truncated inside header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| GeneError::Checkpoint(format!("malformed header: {e}")))?;
        let payload = &bytes[header_end..];
        if payload.len() as u64 != header.payload_bytes {
            return Err(GeneError::Checkpoint(format!(
                "payload is {} bytes, header declares {}",
                payload.len(),
                header.payload_bytes
            )));
        }
        if crc32fast::hash(payload) != header.crc32 {
            return Err(bad("payload checksum mismatch (corrupted file)"));
        }
        let mut expected_offset = 0u64;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            if e.offset != expected_offset {
                return Err(GeneError::Checkpoint(format!("tensor {} at unexpected offset", e.name)));
            }
            let start = e.offset as usize;
            let end = start + n * 8;
            if end > payload.len() {
                return Err(GeneError::Checkpoint(format!("tensor {} extends past payload", e.name)));
            }
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(e.shape, data).map_err(|err| GeneError::Checkpoint(format!("tensor {}: {err}", e.name)))?;
            tensors.push((e.name, t));
            expected_offset = end as u64;
        }
        if expected_offset != header.payload_bytes {
            return Err(bad("manifest does not cover the payload"));
        }
        Ok(Checkpoint {
            config: header.config,
            tensors,
        })
    }
}

/// Appends every entry of `store` as `prefix/name`.
pub fn push_store(tensors: &mut Vec<(String, Tensor)>, prefix: &str, store: &ParamStore) {
    for (name, p) in store.iter() {
        tensors.push((format!("{prefix}/{name}"), p.value.clone()));
    }
}

/// Overwrites every entry of `store` from `prefix/name` tensors.
pub fn restore_store(ckpt: &Checkpoint, prefix: &str, store: &mut ParamStore) -> Result<()> {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let key = format!("{prefix}/{name}");
        let t = ckpt
            .tensor(&key)
            .ok_or_else(|| GeneError::Checkpoint(format!("missing tensor {key}")))?;
        store
            .set_value(&name, t.clone())
            .map_err(|e| GeneError::Checkpoint(format!("{key}: {e}")))?;
    }
    Ok(())
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &ckpt.to_bytes()?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| GeneError::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| GeneError::Usage(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes).map_err(|e| GeneError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| GeneError::io(path, e))
}
