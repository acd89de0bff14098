//! Binary checkpoint: 8-byte magic, u32 version, u32 descriptor length, the
//! architecture descriptor as UTF-8, then every parameter as a little-endian
//! f64 in declaration order.

use std::fs;
use std::path::Path;

use super::{Architecture, EmbeddingNetwork, Real};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CDFSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Real>(net: &EmbeddingNetwork<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let descriptor = net.architecture().descriptor();
    let mut bytes = Vec::with_capacity(16 + descriptor.len() + 8 * net.num_params());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend(CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend((descriptor.len() as u32).to_le_bytes());
    bytes.extend(descriptor.as_bytes());
    for p in net.params() {
        bytes.extend(p.f64().to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<EmbeddingNetwork<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |detail: &str| Error::Corruption {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("{} is not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let text = bytes
        .get(16..16 + len)
        .ok_or_else(|| corrupt("truncated descriptor"))?;
    let arch: Architecture = std::str::from_utf8(text)
        .map_err(|_| corrupt("descriptor is not UTF-8"))?
        .parse()?;
    let body = &bytes[16 + len..];
    if body.len() % 8 != 0 {
        return Err(corrupt("parameter payload is not a whole number of f64"));
    }
    let params: Vec<T> = body
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    EmbeddingNetwork::from_params(arch, params).map_err(|e| match e {
        Error::Validation(msg) => corrupt(&msg),
        other => other,
    })
}
