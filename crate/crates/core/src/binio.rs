//! Flat little-endian f64 files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn write_f64s(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reads exactly `expected` values; a size mismatch is reported as `ShortFile`.
pub(crate) fn read_f64s(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let want = (expected * 8) as u64;
    if bytes.len() as u64 != want {
        return Err(Error::ShortFile { path: path.to_path_buf(), expected: want, found: bytes.len() as u64 });
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}
