//! Parameter checkpoints.
//!
//! Layout: an 8-byte little-endian header length, a JSON header
//! `{"version": "sstaf-ckpt-1", "params": {name: {"shape": [..], "offset": n}}}`,
//! then the little-endian `f64` payloads. Offsets are in bytes from the start
//! of the payload section, and payloads follow parameter registration order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "sstaf-ckpt-1";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: String,
    params: BTreeMap<String, Entry>,
}

pub fn to_bytes(store: &ParamStore) -> Result<Vec<u8>> {
    let mut params = BTreeMap::new();
    let mut offset = 0;
    for p in store.iter() {
        params.insert(
            p.name.clone(),
            Entry {
                shape: p.value.shape().to_vec(),
                offset,
            },
        );
        offset += p.value.len() * 8;
    }
    let header = serde_json::to_vec(&Header {
        version: CHECKPOINT_VERSION.to_string(),
        params,
    })?;
    let mut out = Vec::with_capacity(8 + header.len() + offset);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for p in store.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes a checkpoint into a store whose registration order follows the
/// payload offsets.
pub fn from_bytes(bytes: &[u8]) -> Result<ParamStore> {
    if bytes.len() < 8 {
        return Err(Error::parse(bytes.len(), "checkpoint shorter than its length prefix"));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let payload_start = 8usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::parse(8, format!("header length {header_len} exceeds file")))?;
    let header: Header = serde_json::from_slice(&bytes[8..payload_start])
        .map_err(|e| Error::parse(8, format!("bad checkpoint header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::parse(
            8,
            format!("unsupported checkpoint version `{}`", header.version),
        ));
    }
    let payload = &bytes[payload_start..];
    let mut entries: Vec<_> = header.params.into_iter().collect();
    entries.sort_by_key(|(_, e)| e.offset);
    let mut store = ParamStore::new();
    for (name, entry) in entries {
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + n * 8;
        if end > payload.len() {
            return Err(Error::parse(
                payload_start + entry.offset,
                format!("payload of `{name}` runs past end of file"),
            ));
        }
        let data = payload[entry.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(name, Tensor::new(&entry.shape, data)?)?;
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(store)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
