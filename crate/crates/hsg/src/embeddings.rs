//! Precomputed per-label vectors from an external text encoder.
//!
//! Either JSON (`{"label": [f, ...], ...}`) or binary: magic `HSGEMB\0\0`,
//! u32 entry count, u32 width, then per entry u32 name length, UTF-8 name,
//! and `width` little-endian f64 values.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{self, Error, Result};

pub const MAGIC: &[u8; 8] = b"HSGEMB\0\0";

pub fn encode_binary(map: &BTreeMap<String, Vec<f64>>) -> Result<Vec<u8>> {
    let width = map.values().next().map_or(0, Vec::len);
    if map.values().any(|v| v.len() != width) {
        return Err(hsg_core::Error::DimensionMismatch { expected: width, actual: 0 }.into());
    }
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(map.len() as u32).to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    for (label, v) in map {
        out.extend_from_slice(&(label.len() as u32).to_le_bytes());
        out.extend_from_slice(label.as_bytes());
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

fn decode_binary(bytes: &[u8], path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let truncated = || Error::parse(path, "truncated embedding file");
    let mut pos = 8;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(truncated)?;
        pos += n;
        Ok(s)
    };
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let width = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut map = BTreeMap::new();
    for _ in 0..count {
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let label = std::str::from_utf8(take(len)?).map_err(|e| Error::parse(path, e))?.to_string();
        let v = take(width * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        map.insert(label, v);
    }
    Ok(map)
}

pub fn load_embeddings(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let bytes = error::read(path)?;
    if bytes.starts_with(MAGIC) {
        decode_binary(&bytes, path)
    } else {
        serde_json::from_slice(&bytes).map_err(|e| Error::parse(path, e))
    }
}
