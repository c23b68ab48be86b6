//! SLMX: `b"SLMX"`, u32 version, u64 rows, u64 cols, then `rows·cols`
//! little-endian IEEE-754 doubles in row-major order.

use std::fs;
use std::path::Path;

use super::Matrix;
use crate::error::{Error, Result};

pub const SLMX_MAGIC: [u8; 4] = *b"SLMX";
pub const SLMX_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.as_slice().len());
    out.extend_from_slice(&SLMX_MAGIC);
    out.extend_from_slice(&SLMX_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix> {
    let fail = |offset: usize, message: String| Error::Format {
        offset: offset as u64,
        message,
    };
    if bytes.len() < 4 || bytes[..4] != SLMX_MAGIC {
        return Err(fail(0, "bad magic bytes".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), format!("truncated header ({} of {HEADER_LEN} bytes)", bytes.len())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SLMX_VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let count = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| fail(8, format!("dimension overflow ({rows}x{cols})")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < count {
        return Err(fail(bytes.len(), format!("truncated payload: expected {count} bytes, found {}", payload.len())));
    }
    if payload.len() > count {
        return Err(fail(HEADER_LEN + count, "trailing bytes after payload".into()));
    }
    let mut data = Vec::with_capacity(count / 8);
    for (i, chunk) in payload.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(fail(HEADER_LEN + 8 * i, "non-finite entry".into()));
        }
        data.push(v);
    }
    Ok(Matrix::from_raw(rows as usize, cols as usize, data))
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_matrix(m)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes)
}
