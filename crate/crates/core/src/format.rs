//! Binary tensor files and atomic file output.
//!
//! Both formats share one layout: an 8-byte magic, a little-endian `u32`
//! rank, `rank` little-endian `u32` dimensions, then the row-major `f32`
//! payload in little-endian order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ClipTensor, Tensor};

pub const CLIP_MAGIC: &[u8; 8] = b"TRELCLP1";
pub const WEIGHT_MAGIC: &[u8; 8] = b"TRELWGT1";

pub fn encode_tensor(magic: &[u8; 8], tensor: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * tensor.rank() + 4 * tensor.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Header and payload of a tensor file before shape validation.
#[derive(Debug)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub payload: Vec<f32>,
}

pub fn decode_raw(magic: &[u8; 8], bytes: &[u8], path: &Path) -> Result<RawTensor> {
    let bad = |detail: String| Error::InvalidFormat {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 12 || &bytes[..8] != magic {
        return Err(bad(format!(
            "expected magic {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let word = |offset: usize| u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
    let rank = word(8) as usize;
    let header = 12 + 4 * rank;
    if bytes.len() < header {
        return Err(bad(format!("truncated header for rank {rank}")));
    }
    let dims: Vec<usize> = (0..rank).map(|i| word(12 + 4 * i) as usize).collect();
    let body = &bytes[header..];
    if body.len() % 4 != 0 {
        return Err(bad(format!("payload of {} bytes is not f32-aligned", body.len())));
    }
    let payload = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(RawTensor { dims, payload })
}

pub fn decode_tensor(magic: &[u8; 8], bytes: &[u8], path: &Path) -> Result<Tensor> {
    let raw = decode_raw(magic, bytes, path)?;
    Tensor::new(raw.dims, raw.payload).map_err(|e| Error::InvalidFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_clip(path: &Path, clip: &ClipTensor) -> Result<()> {
    write_atomic(path, &encode_tensor(CLIP_MAGIC, clip.tensor()))
}

/// Reads a clip; the id is the file stem.
pub fn read_clip(path: &Path, label: Option<usize>) -> Result<ClipTensor> {
    let tensor = decode_tensor(CLIP_MAGIC, &read_bytes(path)?, path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ClipTensor::new(tensor, id, label)
}

pub fn write_weight(path: &Path, tensor: &Tensor) -> Result<()> {
    write_atomic(path, &encode_tensor(WEIGHT_MAGIC, tensor))
}

/// Writes through a sibling temp file and renames, so readers never see a
/// partially written file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value).expect("serializable value");
    text.push(b'\n');
    write_atomic(path, &text)
}
