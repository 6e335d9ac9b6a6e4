//! Binary checkpoint: 8-byte magic, u64 LE header length, JSON header, raw
//! little-endian tensor blobs.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::{Error, Real, Result};

use super::{Architecture, NetworkParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WSDCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    architecture: Architecture,
    tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
}

/// Writes atomically: a temporary sibling file is renamed over `path`.
pub fn save_checkpoint<T: Real>(params: &NetworkParams<T>, path: &Path) -> Result<()> {
    params.validate()?;
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in params.named_tensors() {
        tensors.push(Entry {
            name,
            shape: t.shape().to_vec(),
            dtype: T::DTYPE.to_string(),
            offset: blob.len(),
        });
        for &v in t.data() {
            v.write_le(&mut blob);
        }
    }
    let header = Header {
        version: CHECKPOINT_VERSION,
        architecture: params.arch.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut bytes = Vec::with_capacity(16 + json.len() + blob.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    bytes.extend_from_slice(&blob);

    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()
    };
    write().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint whose dtype matches `T`.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<NetworkParams<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse::<T>(&bytes)
}

/// Loads a checkpoint and requires it to match `expected`; a mismatch names
/// the first offending tensor.
pub fn load_checkpoint_expecting<T: Real>(path: &Path, expected: &Architecture) -> Result<NetworkParams<T>> {
    let params = load_checkpoint::<T>(path)?;
    for ((name, got), (_, want)) in params.arch.tensor_shapes().into_iter().zip(expected.tensor_shapes()) {
        if got != want {
            return Err(Error::Shape(format!("tensor {name} has shape {got:?}, expected {want:?}")));
        }
    }
    if params.arch != *expected {
        return Err(Error::Checkpoint(format!(
            "architecture {:?} does not match the expected {:?}",
            params.arch, expected
        )));
    }
    Ok(params)
}

fn parse<T: Real>(bytes: &[u8]) -> Result<NetworkParams<T>> {
    if bytes.len() < 16 {
        return Err(Error::Checkpoint("file is truncated before the header".into()));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("file is truncated inside the header".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..body]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {} (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    let arch = header.architecture;
    arch.validate()?;
    let blob = &bytes[body..];
    let expected = arch.tensor_shapes();
    if header.tensors.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "header lists {} tensors, architecture needs {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    let mut tensors = Vec::with_capacity(expected.len());
    for (entry, (name, shape)) in header.tensors.iter().zip(&expected) {
        if entry.name != *name {
            return Err(Error::Checkpoint(format!("expected tensor {name}, found {}", entry.name)));
        }
        if entry.shape != *shape {
            return Err(Error::Shape(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                entry.shape
            )));
        }
        if entry.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "tensor {name} is stored as {}, requested {}",
                entry.dtype,
                T::DTYPE
            )));
        }
        let count: usize = shape.iter().product();
        let end = entry.offset + count * T::BYTES;
        if end > blob.len() {
            return Err(Error::Checkpoint(format!("file is truncated inside tensor {name}")));
        }
        let data = blob[entry.offset..end].chunks_exact(T::BYTES).map(T::read_le).collect();
        tensors.push(Tensor::new(shape.clone(), data)?);
    }
    let mut it = tensors.into_iter();
    let nc = arch.channels.len();
    let mut conv_weights = Vec::with_capacity(nc);
    let mut conv_biases = Vec::with_capacity(nc);
    for _ in 0..nc {
        conv_weights.push(it.next().expect("counted"));
        conv_biases.push(it.next().expect("counted"));
    }
    let params = NetworkParams {
        arch,
        conv_weights,
        conv_biases,
        head_weight: it.next().expect("counted"),
        head_bias: it.next().expect("counted"),
        log_support: it.next().expect("counted"),
    };
    params.validate()?;
    Ok(params)
}
