//! Model checkpoints: a binary file of named tensors plus a JSON sidecar
//! holding the model config and the label and class spaces.
//!
//! Binary layout, little-endian throughout:
//! magic `HSGCKPT\0`, u32 version, u32 tensor count, then per tensor
//! u32 name length, UTF-8 name, u32 rank, u64 per dimension, f64 values.

use std::path::{Path, PathBuf};

use hsg_core::model::{ExternalEmbeddings, Model, ModelConfig};
use hsg_core::scene::{ClassIndex, LabelVocab};
use hsg_core::tensor::{ParamStore, Tensor};
use hsg_core::train::Checkpoint;
use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};

pub const MAGIC: &[u8; 8] = b"HSGCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const EXTERNAL_TABLE: &str = "frozen.external_table";

pub fn encode_tensors<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let tensors: Vec<(&str, &Tensor)> = tensors.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::parse(self.path, "truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_tensors(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != MAGIC {
        return Err(Error::parse(path, "not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::parse(path, format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|e| Error::parse(path, e))?.to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::parse(path, "tensor too large"))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::parse(path, "tensor too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::parse(path, format!("{name}: {e}")))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::parse(path, "trailing bytes after last tensor"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub format_version: u32,
    pub model: ModelConfig,
    pub vocab: LabelVocab,
    pub room_classes: ClassIndex,
    pub region_classes: ClassIndex,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let model = &ckpt.model;
    let mut tensors: Vec<(&str, &Tensor)> = model.params().iter().collect();
    if let Some(ext) = model.external() {
        tensors.push((EXTERNAL_TABLE, ext.table()));
    }
    error::write(path, encode_tensors(tensors))?;
    let sidecar = Sidecar {
        format_version: FORMAT_VERSION,
        model: model.config().clone(),
        vocab: ckpt.vocab.clone(),
        room_classes: ckpt.room_classes.clone(),
        region_classes: ckpt.region_classes.clone(),
    };
    error::write_json(&sidecar_path(path), &sidecar)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let side_path = sidecar_path(path);
    let sidecar: Sidecar =
        serde_json::from_str(&error::read_string(&side_path)?).map_err(|e| Error::parse(&side_path, e))?;
    if sidecar.format_version != FORMAT_VERSION {
        return Err(Error::parse(&side_path, format!("unsupported sidecar version {}", sidecar.format_version)));
    }
    let mut params = ParamStore::new();
    let mut external = None;
    for (name, t) in decode_tensors(&error::read(path)?, path)? {
        if name == EXTERNAL_TABLE {
            external = Some(ExternalEmbeddings::from_table(t)?);
        } else {
            params.insert(name, t)?;
        }
    }
    if sidecar.vocab.size() != sidecar.model.vocab_size
        || sidecar.room_classes.len() != sidecar.model.n_room_classes
        || sidecar.region_classes.len() != sidecar.model.n_region_classes
    {
        return Err(Error::parse(&side_path, "vocabulary or class lists disagree with the model config"));
    }
    let model = Model::from_parts(sidecar.model, params, external)?;
    Ok(Checkpoint { model, vocab: sidecar.vocab, room_classes: sidecar.room_classes, region_classes: sidecar.region_classes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_codec_round_trip() {
        let a = Tensor::matrix(2, 3, vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE, 1e300, -0.0]).unwrap();
        let b = Tensor::scalar(7.0);
        let bytes = encode_tensors([("a", &a), ("b.c", &b)]);
        let back = decode_tensors(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, vec![("a".to_string(), a), ("b.c".to_string(), b)]);
        assert_eq!(&bytes[..8], MAGIC);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let t = Tensor::scalar(1.0);
        let bytes = encode_tensors([("a", &t)]);
        assert!(decode_tensors(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_tensors(&bad, Path::new("x")).is_err());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(decode_tensors(&v2, Path::new("x")).is_err());
    }
}
