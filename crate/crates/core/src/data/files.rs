//! PGXB (bag) and PGXG (genomic) feature files.
//!
//! Layout: 4-byte magic, format version `u16`, rows `u32`, columns `u32`,
//! then rows·columns `f32` values. Integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BAG_MAGIC: &[u8; 4] = b"PGXB";
pub const GENOMIC_MAGIC: &[u8; 4] = b"PGXG";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 14;

/// Serializes a `[N × D]` matrix. Values are narrowed to `f32`.
pub fn encode_features(magic: &[u8; 4], t: &Tensor) -> Vec<u8> {
    let (n, d) = match t.shape() {
        [n, d] => (*n, *d),
        [d] => (1, *d),
        _ => (t.rows(), t.row_len()),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Parses a feature file into a `[N × D]` tensor of widened `f32` values.
pub fn decode_features(magic: &[u8; 4], bytes: &[u8], path: &Path) -> Result<Tensor> {
    let fail = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(format!(
            "truncated payload: header needs {HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != magic {
        return Err(fail(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(fail(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (n, d) = (word(6), word(10));
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| fail(format!("dimensions {n}×{d} overflow")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(fail(format!(
            "truncated payload: {n}×{d} needs {expected} bytes, found {}",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(fail(format!(
            "{} trailing bytes after {n}×{d} payload",
            payload.len() - expected
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::new(vec![n, d], data).map_err(|e| fail(e.to_string()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_bag(path: &Path, bag: &Tensor) -> Result<()> {
    write(path, &encode_features(BAG_MAGIC, bag))
}

pub fn load_bag(path: &Path) -> Result<Tensor> {
    decode_features(BAG_MAGIC, &read(path)?, path)
}

pub fn save_genomic(path: &Path, genomic: &Tensor) -> Result<()> {
    write(path, &encode_features(GENOMIC_MAGIC, genomic))
}

/// Loads a one-row genomic file as a `[D_g]` vector.
pub fn load_genomic(path: &Path) -> Result<Tensor> {
    let t = decode_features(GENOMIC_MAGIC, &read(path)?, path)?;
    if t.shape()[0] != 1 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("genomic file must have one row, found {}", t.shape()[0]),
        });
    }
    let d = t.shape()[1];
    t.reshaped(&[d])
}
